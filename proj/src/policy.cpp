#include "itrl/policy.hpp"

namespace itrl::model {

void PolicyConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("policy config: " + msg); };
  if (d <= 0 || depth <= 0 || heads <= 0 || context <= 0 || cameras <= 0 || feature_dim <= 0 || mlp_ratio <= 0)
    fail("sizes must be positive");
  if (d % heads != 0) fail("width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  if (action_dim != bw::kActionDim) fail("action dim must be " + std::to_string(bw::kActionDim));
  if (proprio_dim != bw::kProprioDim) fail("proprio dim must be " + std::to_string(bw::kProprioDim));
}

void PolicyConfig::to_header(Header& h) const {
  h["policy.d"] = std::to_string(d);
  h["policy.depth"] = std::to_string(depth);
  h["policy.heads"] = std::to_string(heads);
  h["policy.context"] = std::to_string(context);
  h["policy.cameras"] = std::to_string(cameras);
  h["policy.feature_dim"] = std::to_string(feature_dim);
  h["policy.mlp_ratio"] = std::to_string(mlp_ratio);
}

PolicyConfig PolicyConfig::from_header(const Header& h) {
  PolicyConfig c;
  c.d = header_int(h, "policy.d");
  c.depth = header_int(h, "policy.depth");
  c.heads = header_int(h, "policy.heads");
  c.context = header_int(h, "policy.context");
  c.cameras = header_int(h, "policy.cameras");
  c.feature_dim = header_int(h, "policy.feature_dim");
  c.mlp_ratio = header_int(h, "policy.mlp_ratio");
  c.validate();
  return c;
}

Eigen::RowVectorXf action_target(const bw::Action& a) {
  Eigen::RowVectorXf t(bw::kActionDim);
  t.head<3>() = a.position.transpose();
  t.segment<4>(3) = bw::canonicalize_quaternion(a.quaternion).transpose();
  t(7) = a.gripper >= 0.5f ? 1.f : 0.f;
  return t;
}

bw::Action to_action(std::span<const float> raw) {
  bw::Action a = bw::Action::from_array(raw);
  a.quaternion = bw::canonicalize_quaternion(a.quaternion);
  a.gripper = a.gripper >= 0.5f ? 1.f : 0.f;
  return a;
}

}  // namespace itrl::model
