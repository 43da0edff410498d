#include "erpd/metrics.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <ostream>

#include "erpd/errors.hpp"

namespace erpd {

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::stage1: return "stage1";
    case Phase::stage2: return "stage2";
    case Phase::online: return "online";
    case Phase::eval: return "eval";
  }
  return "?";
}

Phase phase_from_string(std::string_view name) {
  for (auto p : {Phase::stage1, Phase::stage2, Phase::online, Phase::eval}) {
    if (to_string(p) == name) return p;
  }
  throw InputError(fmt::format("unknown phase '{}'", name));
}

namespace {

std::string num(double x) { return fmt::format("{:.9g}", x); }
std::string opt(const std::optional<double>& x) { return x ? num(*x) : std::string(); }

}  // namespace

std::string format_metrics_row(const MetricsRow& r) {
  return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}", r.step, to_string(r.phase), num(r.objective),
                     num(r.reverse_kl), num(r.kl_penalty), num(r.entropy), opt(r.avg_at_k), opt(r.pos_prob),
                     opt(r.neg_prob), opt(r.ratio_diag), opt(r.explained_var), opt(r.wall_ms));
}

void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) out << format_metrics_row(r) << '\n';
}

void write_metrics_csv(const std::string& path, std::span<const MetricsRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot write metrics file {}", path));
  write_metrics_csv(out, rows);
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError(fmt::format("cannot read metrics file {}", path));
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw InputError(fmt::format("{}: bad metrics header", path));
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      f.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (f.size() != 12) throw InputError(fmt::format("{}: malformed metrics row '{}'", path, line));
    auto opt_of = [](const std::string& cell) { return cell.empty() ? std::nullopt : std::optional(std::stod(cell)); };
    MetricsRow r;
    r.step = std::stol(f[0]);
    r.phase = phase_from_string(f[1]);
    r.objective = std::stod(f[2]);
    r.reverse_kl = std::stod(f[3]);
    r.kl_penalty = std::stod(f[4]);
    r.entropy = std::stod(f[5]);
    r.avg_at_k = opt_of(f[6]);
    r.pos_prob = opt_of(f[7]);
    r.neg_prob = opt_of(f[8]);
    r.ratio_diag = opt_of(f[9]);
    r.explained_var = opt_of(f[10]);
    r.wall_ms = opt_of(f[11]);
    rows.push_back(r);
  }
  return rows;
}

KlEstimate reverse_kl_estimate(const PolicyParams& policy, const PolicyParams& ref, const EnvSpec& env,
                               std::size_t n_rollouts, std::uint64_t seed, double temperature) {
  if (n_rollouts < 1) throw ConfigError("reverse_kl_estimate needs at least one rollout");
  const std::uint64_t space = env.prompt_space_size();
  std::uniform_int_distribution<std::uint64_t> pick(0, space - 1);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < n_rollouts; ++i) {
    Rng rng = derive_stream(seed, 0x6b6cULL, i);
    const auto prompt = env.prompt_from_index(pick(rng));
    std::vector<Token> prefix;
    while (int(prefix.size()) < env.max_gen_len) {
      const Vector s = encode_state(env, prompt, prefix);
      const Forward f = forward(policy, s);
      const SampledToken tok = sample_from_logits(f.logits, temperature, rng);
      const double d = f.log_probs[tok.token] - log_prob(ref, s, tok.token);
      sum += d;
      sq += d * d;
      ++n;
      prefix.push_back(tok.token);
      if (tok.token == env.eos_token) break;
    }
  }
  KlEstimate out;
  out.tokens = n;
  out.mean = sum / double(n);
  const double var = std::max(0.0, sq / double(n) - out.mean * out.mean);
  out.std_error = n > 1 ? std::sqrt(var / double(n - 1)) : 0.0;
  return out;
}

std::optional<double> explained_variance(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) throw InputError("explained_variance: size mismatch");
  const std::size_t n = targets.size();
  if (n < 2) return std::nullopt;
  double mt = 0.0, mr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mt += targets[i];
    mr += targets[i] - predictions[i];
  }
  mt /= double(n);
  mr /= double(n);
  double vt = 0.0, vr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    vt += (targets[i] - mt) * (targets[i] - mt);
    const double res = targets[i] - predictions[i] - mr;
    vr += res * res;
  }
  if (vt == 0.0) return std::nullopt;
  return 1.0 - vr / vt;
}

PosNegProb pos_neg_prob_track(const TokenTable& table, const PolicyParams& policy) {
  double ps = 0.0, ns = 0.0;
  std::size_t pn = 0, nn = 0;
  for (const TokenRow& row : table.rows) {
    const double p = std::exp(log_prob(policy, row.state, row.action));
    if (row.reward > 0.5) {
      ps += p;
      ++pn;
    } else {
      ns += p;
      ++nn;
    }
  }
  PosNegProb out;
  if (pn) out.pos = ps / double(pn);
  if (nn) out.neg = ns / double(nn);
  return out;
}

double batch_entropy(const TokenTable& table, const PolicyParams& policy) {
  if (table.rows.empty()) return 0.0;
  double h = 0.0;
  for (const TokenRow& row : table.rows) h += entropy(policy, row.state);
  return h / double(table.rows.size());
}

std::optional<double> batch_explained_variance(const TokenTable& table, const PolicyParams& policy) {
  std::vector<double> pred, target;
  pred.reserve(table.rows.size());
  target.reserve(table.rows.size());
  for (const TokenRow& row : table.rows) {
    pred.push_back(std::exp(log_prob(policy, row.state, row.action)));
    target.push_back(row.reward);
  }
  return explained_variance(pred, target);
}

}  // namespace erpd
