#include "erpd/policy.hpp"

#include <fmt/format.h>
#include "json.hpp"

#include <fstream>
#include <sstream>
#include <utility>

#include "erpd/errors.hpp"

namespace erpd {

namespace {

void check_state(const PolicyParams& params, const Vector& state) {
  if (state.size() != params.dims().feat) {
    throw ConfigError(fmt::format("state has {} features, policy expects {}", state.size(),
                                  params.dims().feat));
  }
}

void check_action(const PolicyParams& params, Token action) {
  if (action < 0 || action >= params.dims().vocab) {
    throw InputError(fmt::format("token {} outside vocabulary of size {}", action, params.dims().vocab));
  }
}

void check_dims(const ModelDims& dims) {
  if (dims.feat <= 0 || dims.hidden <= 0 || dims.vocab <= 1) {
    throw ConfigError(fmt::format("invalid model dims feat={} hidden={} vocab={}", dims.feat,
                                  dims.hidden, dims.vocab));
  }
}

}  // namespace

PolicyParams::PolicyParams(ModelDims dims) : dims_(dims), flat_(Vector::Zero(dims.param_count())) {
  check_dims(dims);
}

PolicyParams::PolicyParams(ModelDims dims, Vector flat) : dims_(dims), flat_(std::move(flat)) {
  check_dims(dims);
  if (flat_.size() != dims.param_count()) {
    throw ConfigError(fmt::format("flat parameter vector has {} entries, dims require {}",
                                  flat_.size(), dims.param_count()));
  }
}

PolicyParams PolicyParams::random(ModelDims dims, Rng& rng, double scale) {
  PolicyParams p(dims);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double s1 = scale / std::sqrt(double(dims.feat));
  const double s2 = scale / std::sqrt(double(dims.hidden));
  auto w1 = p.w1();
  for (Eigen::Index i = 0; i < w1.size(); ++i) w1.data()[i] = s1 * normal(rng);
  auto w2 = p.w2();
  for (Eigen::Index i = 0; i < w2.size(); ++i) w2.data()[i] = s2 * normal(rng);
  return p;
}

PolicyParams::ConstMatrixMap PolicyParams::w1() const {
  return {flat_.data(), dims_.hidden, dims_.feat};
}
PolicyParams::ConstVectorMap PolicyParams::b1() const {
  return {flat_.data() + b1_offset(), dims_.hidden};
}
PolicyParams::ConstMatrixMap PolicyParams::w2() const {
  return {flat_.data() + w2_offset(), dims_.vocab, dims_.hidden};
}
PolicyParams::ConstVectorMap PolicyParams::b2() const {
  return {flat_.data() + b2_offset(), dims_.vocab};
}
PolicyParams::MatrixMap PolicyParams::w1() { return {flat_.data(), dims_.hidden, dims_.feat}; }
PolicyParams::VectorMap PolicyParams::b1() { return {flat_.data() + b1_offset(), dims_.hidden}; }
PolicyParams::MatrixMap PolicyParams::w2() {
  return {flat_.data() + w2_offset(), dims_.vocab, dims_.hidden};
}
PolicyParams::VectorMap PolicyParams::b2() { return {flat_.data() + b2_offset(), dims_.vocab}; }

GradientView gradient_view(const ModelDims& dims, Vector& grad) {
  const Eigen::Index b1 = Eigen::Index(dims.hidden) * dims.feat;
  const Eigen::Index w2 = b1 + dims.hidden;
  const Eigen::Index b2 = w2 + Eigen::Index(dims.vocab) * dims.hidden;
  return {{grad.data(), dims.hidden, dims.feat},
          {grad.data() + b1, dims.hidden},
          {grad.data() + w2, dims.vocab, dims.hidden},
          {grad.data() + b2, dims.vocab}};
}

Vector log_softmax(const Vector& z) {
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return z.array() - lse;
}

Forward forward(const PolicyParams& params, const Vector& state) {
  check_state(params, state);
  Forward f;
  f.hidden = (params.w1() * state + params.b1()).array().tanh();
  f.logits = params.w2() * f.hidden + params.b2();
  f.log_probs = log_softmax(f.logits);
  f.probs = f.log_probs.array().exp();
  return f;
}

Vector logits(const PolicyParams& params, const Vector& state) { return forward(params, state).logits; }

double log_prob(const PolicyParams& params, const Vector& state, Token action) {
  check_action(params, action);
  return forward(params, state).log_probs[action];
}

double entropy_of(const Forward& fwd) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < fwd.probs.size(); ++i) {
    if (fwd.probs[i] > 0.0) h -= fwd.probs[i] * fwd.log_probs[i];
  }
  return std::max(h, 0.0);
}

double entropy(const PolicyParams& params, const Vector& state) {
  return entropy_of(forward(params, state));
}

Vector dlogits_log_prob(const Forward& fwd, Token action) {
  Vector d = -fwd.probs;
  d[action] += 1.0;
  return d;
}

Vector dlogits_prob(const Forward& fwd, Token action) {
  return fwd.probs[action] * dlogits_log_prob(fwd, action);
}

Vector dlogits_entropy(const Forward& fwd) {
  const double h = entropy_of(fwd);
  Vector d(fwd.probs.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    // p log p -> 0 as p -> 0, and so does its logit derivative
    d[i] = fwd.probs[i] > 0.0 ? -fwd.probs[i] * (fwd.log_probs[i] + h) : 0.0;
  }
  return d;
}

void accumulate_backprop(const PolicyParams& params, const Vector& state, const Forward& fwd,
                         const Vector& dlogits, double scale, Vector& grad) {
  auto g = gradient_view(params.dims(), grad);
  const Vector dz = scale * dlogits;
  g.w2.noalias() += dz * fwd.hidden.transpose();
  g.b2 += dz;
  const Vector dpre = (params.w2().transpose() * dz).array() * (1.0 - fwd.hidden.array().square());
  g.w1.noalias() += dpre * state.transpose();
  g.b1 += dpre;
}

Vector grad_log_prob(const PolicyParams& params, const Vector& state, Token action) {
  check_action(params, action);
  const Forward f = forward(params, state);
  Vector grad = Vector::Zero(params.dims().param_count());
  accumulate_backprop(params, state, f, dlogits_log_prob(f, action), 1.0, grad);
  return grad;
}

SampledToken sample_from_logits(const Vector& z, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw InputError(fmt::format("temperature must be positive, got {}", temperature));
  const Vector tempered = log_softmax(z / temperature);
  const double u = uniform01(rng);
  double acc = 0.0;
  Token chosen = static_cast<Token>(z.size() - 1);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    acc += std::exp(tempered[i]);
    if (u < acc) {
      chosen = static_cast<Token>(i);
      break;
    }
  }
  // Guard against rounding leaving u above the accumulated mass: fall back
  // to the last token with nonzero probability.
  while (chosen > 0 && std::exp(tempered[chosen]) == 0.0) --chosen;
  return {chosen, log_softmax(z)[chosen]};
}

SampledToken sample_token(const PolicyParams& params, const Vector& state, double temperature, Rng& rng) {
  return sample_from_logits(logits(params, state), temperature, rng);
}

PolicySnapshot::PolicySnapshot(PolicyParams params, long step, std::string tag)
    : params_(std::move(params)), step_(step), tag_(std::move(tag)) {
  if (tag_.empty()) throw ConfigError("snapshot tag must be nonempty");
  if (step_ < 0) throw ConfigError(fmt::format("snapshot step must be nonnegative, got {}", step_));
  if (!params_.all_finite()) throw InputError(fmt::format("snapshot '{}' has non-finite parameters", tag_));
}

PolicySnapshot snapshot(const PolicyParams& params, long step, std::string tag) {
  return PolicySnapshot(params, step, std::move(tag));
}

PolicyParams restore(const PolicySnapshot& snap) { return snap.params(); }

namespace {

void write_array(std::ostringstream& os, const double* data, Eigen::Index n) {
  os << '[';
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i) os << ", ";
    os << fmt::format("{:.17g}", data[i]);
  }
  os << ']';
}

void write_matrix(std::ostringstream& os, PolicyParams::ConstMatrixMap m) {
  os << '[';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (r) os << ",\n    ";
    write_array(os, m.data() + r * m.cols(), m.cols());
  }
  os << ']';
}

}  // namespace

std::string checkpoint_to_string(const PolicySnapshot& snap) {
  const PolicyParams& p = snap.params();
  const ModelDims& d = p.dims();
  std::ostringstream os;
  os << "{\n";
  os << "  \"format_version\": 1,\n";
  os << "  \"feat\": " << d.feat << ",\n";
  os << "  \"hidden\": " << d.hidden << ",\n";
  os << "  \"vocab\": " << d.vocab << ",\n";
  os << "  \"step\": " << snap.step() << ",\n";
  os << "  \"tag\": " << nlohmann::json(snap.tag()).dump() << ",\n";
  os << "  \"w1\": ";
  write_matrix(os, p.w1());
  os << ",\n  \"b1\": ";
  write_array(os, p.b1().data(), p.b1().size());
  os << ",\n  \"w2\": ";
  write_matrix(os, p.w2());
  os << ",\n  \"b2\": ";
  write_array(os, p.b2().data(), p.b2().size());
  os << "\n}\n";
  return os.str();
}

PolicySnapshot checkpoint_from_string(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("malformed checkpoint: {}", e.what()));
  }
  try {
    if (doc.at("format_version").get<int>() != 1) {
      throw ConfigError("unsupported checkpoint format_version");
    }
    ModelDims dims{doc.at("feat").get<int>(), doc.at("hidden").get<int>(), doc.at("vocab").get<int>()};
    PolicyParams p(dims);
    auto read_matrix = [](const nlohmann::json& j, PolicyParams::MatrixMap m, const char* name) {
      if (!j.is_array() || Eigen::Index(j.size()) != m.rows()) {
        throw ConfigError(fmt::format("checkpoint field {} has wrong row count", name));
      }
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const auto& row = j[r];
        if (!row.is_array() || Eigen::Index(row.size()) != m.cols()) {
          throw ConfigError(fmt::format("checkpoint field {} has wrong column count", name));
        }
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = row[c].get<double>();
      }
    };
    auto read_vector = [](const nlohmann::json& j, PolicyParams::VectorMap v, const char* name) {
      if (!j.is_array() || Eigen::Index(j.size()) != v.size()) {
        throw ConfigError(fmt::format("checkpoint field {} has wrong length", name));
      }
      for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[i].get<double>();
    };
    read_matrix(doc.at("w1"), p.w1(), "w1");
    read_vector(doc.at("b1"), p.b1(), "b1");
    read_matrix(doc.at("w2"), p.w2(), "w2");
    read_vector(doc.at("b2"), p.b2(), "b2");
    return PolicySnapshot(std::move(p), doc.at("step").get<long>(), doc.at("tag").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("malformed checkpoint: {}", e.what()));
  }
}

void save_checkpoint(const std::string& path, const PolicySnapshot& snap) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot write checkpoint {}", path));
  out << checkpoint_to_string(snap);
}

PolicySnapshot load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError(fmt::format("checkpoint {} not found", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace erpd
