#include "trajattr/metrics.hpp"

#include <fmt/format.h>

namespace trajattr {

namespace {

void check_horizon(const MixturePrediction& pred, const Eigen::MatrixX2d& gt) {
  if (pred.modes.empty()) throw std::invalid_argument("metrics: prediction has no modes");
  if (pred.modes.front().rows() != gt.rows()) {
    throw std::invalid_argument(fmt::format("metrics: prediction horizon {} but ground truth has {} steps",
                                            pred.modes.front().rows(), gt.rows()));
  }
}

}  // namespace

std::string to_string(const MetricKind& kind) {
  switch (kind.kind) {
    case MetricKind::Kind::MinADE:
      return fmt::format("minADE@{}", kind.k);
    case MetricKind::Kind::MinFDE:
      return fmt::format("minFDE@{}", kind.k);
    case MetricKind::Kind::MissRate:
      return fmt::format("MR@{}({:g})", kind.k, kind.threshold_m);
    case MetricKind::Kind::NLL:
      return "NLL";
  }
  return "?";
}

MetricKind parse_metric(const std::string& text) {
  if (text == "NLL" || text == "nll") return MetricKind::nll();
  const auto at = text.find('@');
  const std::string name = text.substr(0, at);
  int k = 0;
  double threshold = 2.0;
  if (at != std::string::npos) {
    std::string rest = text.substr(at + 1);
    const auto paren = rest.find('(');
    if (paren != std::string::npos) {
      if (rest.back() != ')') throw std::invalid_argument("bad metric: " + text);
      threshold = std::stod(rest.substr(paren + 1, rest.size() - paren - 2));
      rest = rest.substr(0, paren);
    }
    std::size_t used = 0;
    k = std::stoi(rest, &used);
    if (used != rest.size() || k < 0) throw std::invalid_argument("bad metric: " + text);
  }
  if (name == "minADE") return MetricKind::min_ade(k);
  if (name == "minFDE") return MetricKind::min_fde(k);
  if (name == "MR" || name == "MissRate") {
    if (!(threshold > 0)) throw std::invalid_argument("bad metric: threshold must be positive in " + text);
    return MetricKind::miss_rate(k, threshold);
  }
  throw std::invalid_argument("unknown metric: " + text);
}

std::vector<int> top_modes(const MixturePrediction& pred, int k) {
  const int K = pred.num_modes();
  if (k < 0 || k > K) throw std::invalid_argument(fmt::format("metrics: K'={} outside [0, {}]", k, K));
  if (k == 0) k = K;
  std::vector<int> idx(static_cast<std::size_t>(K));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return pred.log_mode_probs(a) > pred.log_mode_probs(b); });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

double min_ade(const MixturePrediction& pred, const Eigen::MatrixX2d& gt, int k) {
  check_horizon(pred, gt);
  double best = std::numeric_limits<double>::infinity();
  for (int m : top_modes(pred, k)) best = std::min(best, average_displacement(pred.modes[m], gt));
  return best;
}

double min_fde(const MixturePrediction& pred, const Eigen::MatrixX2d& gt, int k) {
  check_horizon(pred, gt);
  double best = std::numeric_limits<double>::infinity();
  for (int m : top_modes(pred, k)) best = std::min(best, final_displacement(pred.modes[m], gt));
  return best;
}

double miss_rate(const MixturePrediction& pred, const Eigen::MatrixX2d& gt, int k, double threshold_m) {
  return min_fde(pred, gt, k) <= threshold_m ? 0.0 : 1.0;
}

double mixture_nll(const MixturePrediction& pred, const Eigen::MatrixX2d& gt) {
  check_horizon(pred, gt);
  Eigen::VectorXd terms(pred.num_modes());
  for (int m = 0; m < pred.num_modes(); ++m) {
    terms(m) = pred.log_mode_probs(m) + diagonal_gaussian_log_pdf(gt, pred.modes[m], pred.sigmas[m]);
  }
  return -log_sum_exp(terms);
}

MetricValue evaluate(const MixturePrediction& pred, const Eigen::MatrixX2d& gt, const MetricKind& kind) {
  MetricValue out;
  out.kind = kind;
  switch (kind.kind) {
    case MetricKind::Kind::MinADE:
      out.value = min_ade(pred, gt, kind.k);
      break;
    case MetricKind::Kind::MinFDE:
      out.value = min_fde(pred, gt, kind.k);
      break;
    case MetricKind::Kind::MissRate:
      if (!(kind.threshold_m > 0)) throw std::invalid_argument("metrics: miss threshold must be positive");
      out.value = miss_rate(pred, gt, kind.k, kind.threshold_m);
      break;
    case MetricKind::Kind::NLL:
      out.value = mixture_nll(pred, gt);
      break;
  }
  return out;
}

double value_function(const PredictorModel& model, const Scene& scene, const AgentSet& coalition,
                      const MetricKind& kind, const InferenceMode& mode) {
  return evaluate(predict(model, scene, coalition, mode), target_future(scene), kind).value;
}

}  // namespace trajattr
