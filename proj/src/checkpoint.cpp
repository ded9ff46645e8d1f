#include "itrl/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "itrl/binary_io.hpp"

namespace itrl {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kMultiply: return "multiply";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kReshape: return "reshape";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kEmbeddingLookup: return "embedding_lookup";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLayerNorm: return "layernorm";
    case OpKind::kGelu: return "gelu";
    case OpKind::kMean: return "mean";
    case OpKind::kMse: return "mse";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kAttention: return "attention";
  }
  return "unknown";
}

const MatrixF* CheckpointData::find(const std::string& name) const {
  for (const auto& [n, m] : entries)
    if (n == name) return &m;
  return nullptr;
}

namespace {

void put_entry(std::ostream& os, const std::string& name, const MatrixF& m) {
  bin::put_string(os, name);
  bin::put<std::uint8_t>(os, 2);
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
  bin::put<std::uint64_t>(os, static_cast<std::uint64_t>(m.size()) * 4);
  for (Index i = 0; i < m.size(); ++i) bin::put<float>(os, m.data()[i]);
}

}  // namespace

const std::string& header_string(const Header& h, const std::string& key) {
  auto it = h.find(key);
  if (it == h.end()) throw IoError("checkpoint header is missing '" + key + "'");
  return it->second;
}

int header_int(const Header& h, const std::string& key) {
  const std::string& v = header_string(h, key);
  std::size_t used = 0;
  try {
    const int x = std::stoi(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw IoError("checkpoint header '" + key + "' is not an integer: " + v);
}

double header_double(const Header& h, const std::string& key) {
  const std::string& v = header_string(h, key);
  std::size_t used = 0;
  try {
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw IoError("checkpoint header '" + key + "' is not a number: " + v);
}

void save_checkpoint(const std::filesystem::path& path, const Header& header, const ParamStore<float>& params,
                     const AdamWState<float>* optimizer) {
  Header h = header;
  if (optimizer) h["adamw.step"] = std::to_string(optimizer->step);
  std::ostringstream text;
  for (const auto& [k, v] : h) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw Error("checkpoint header entry '" + k + "' contains a reserved character");
    text << k << '=' << v << '\n';
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  os.write("ITRL", 4);
  bin::put<std::uint8_t>(os, kCheckpointVersion);
  bin::put_string(os, text.str());
  const std::size_t n = params.size() * (optimizer ? 3 : 1);
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(n));
  for (std::size_t i = 0; i < params.size(); ++i) put_entry(os, params.at(i).name, params.at(i).value);
  if (optimizer) {
    for (std::size_t i = 0; i < params.size(); ++i) put_entry(os, "adamw.m/" + params.at(i).name, optimizer->m[i]);
    for (std::size_t i = 0; i < params.size(); ++i) put_entry(os, "adamw.v/" + params.at(i).name, optimizer->v[i]);
  }
  if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  bin::expect_magic(is, "ITRL", "checkpoint " + path.string());
  const auto version = bin::get<std::uint8_t>(is);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));

  CheckpointData data;
  std::istringstream text(bin::get_string(is));
  for (std::string line; std::getline(text, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("checkpoint header line without '=': " + line);
    data.header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = bin::get<std::uint32_t>(is);
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string name = bin::get_string(is, 4096);
    const auto rank = bin::get<std::uint8_t>(is);
    if (rank != 2) throw IoError("checkpoint entry '" + name + "': unsupported rank " + std::to_string(rank));
    const auto rows = bin::get<std::uint32_t>(is);
    const auto cols = bin::get<std::uint32_t>(is);
    const auto bytes = bin::get<std::uint64_t>(is);
    if (bytes != static_cast<std::uint64_t>(rows) * cols * 4)
      throw IoError("checkpoint entry '" + name + "': payload size does not match shape");
    MatrixF m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = bin::get<float>(is);
    data.entries.emplace_back(std::move(name), std::move(m));
  }
  return data;
}

void load_parameters(const CheckpointData& data, ParamStore<float>& params, const std::string& prefix) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.at(i);
    if (p.name.rfind(prefix, 0) != 0) continue;
    const MatrixF* m = data.find(p.name);
    if (!m) throw ShapeError("checkpoint has no entry for parameter '" + p.name + "'");
    if (shape_of(*m) != shape_of(p.value))
      throw ShapeError("parameter '" + p.name + "' expects shape " + shape_of(p.value).str() +
                       " but checkpoint holds " + shape_of(*m).str());
    p.value = *m;
  }
}

AdamWState<float> load_optimizer(const CheckpointData& data, const ParamStore<float>& params) {
  AdamWState<float> state = AdamWState<float>::zeros_like(params);
  auto it = data.header.find("adamw.step");
  if (it == data.header.end()) return state;
  state.step = std::stoll(it->second);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const MatrixF* m = data.find("adamw.m/" + params.at(i).name);
    const MatrixF* v = data.find("adamw.v/" + params.at(i).name);
    if (!m || !v) throw ShapeError("checkpoint lacks optimizer moments for '" + params.at(i).name + "'");
    if (shape_of(*m) != shape_of(params.at(i).value) || shape_of(*v) != shape_of(params.at(i).value))
      throw ShapeError("optimizer moments for '" + params.at(i).name + "' have the wrong shape");
    state.m[i] = *m;
    state.v[i] = *v;
  }
  return state;
}

}  // namespace itrl
