#include "drl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "drl/checkpoint.hpp"
#include "drl/datagen.hpp"

namespace drl {

namespace {

void require_both(std::size_t n_id, std::size_t n_ood) {
  if (n_id == 0 || n_ood == 0) throw std::invalid_argument("metric needs at least one ID and one OOD sample");
}

void split_scores(std::span<const ScoredSample> samples, Vector& id, Vector& ood) {
  for (const auto& s : samples) (s.is_ood ? ood : id).push_back(s.score);
}

}  // namespace

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  const std::size_t n_id = id_scores.size();
  const std::size_t n_ood = ood_scores.size();
  require_both(n_id, n_ood);
  struct Entry {
    double score;
    bool is_id;
  };
  std::vector<Entry> all;
  all.reserve(n_id + n_ood);
  for (double s : id_scores) all.push_back({s, true});
  for (double s : ood_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

  // Sum of 1-based average ranks of the ID entries.
  double id_rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::size_t ids = 0;
    while (j < all.size() && all[j].score == all[i].score) ids += all[j++].is_id ? 1 : 0;
    const double avg_rank = static_cast<double>(i + 1 + j) / 2.0;
    id_rank_sum += avg_rank * static_cast<double>(ids);
    i = j;
  }
  const double u = id_rank_sum - static_cast<double>(n_id) * static_cast<double>(n_id + 1) / 2.0;
  return u / (static_cast<double>(n_id) * static_cast<double>(n_ood));
}

double auroc(std::span<const ScoredSample> samples) {
  Vector id, ood;
  split_scores(samples, id, ood);
  return auroc(id, ood);
}

OperatingPoint tpr95_operating_point(std::span<const double> id_scores, std::span<const double> ood_scores) {
  const std::size_t n_id = id_scores.size();
  const std::size_t n_ood = ood_scores.size();
  require_both(n_id, n_ood);
  Vector sorted(id_scores.begin(), id_scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  // Smallest count m with m / n_id >= 0.95.
  const std::size_t needed = (95 * n_id + 99) / 100;
  OperatingPoint op;
  op.threshold = sorted[needed - 1];
  const auto id_hits = std::count_if(id_scores.begin(), id_scores.end(), [&](double s) { return s >= op.threshold; });
  const auto ood_hits = std::count_if(ood_scores.begin(), ood_scores.end(), [&](double s) { return s >= op.threshold; });
  op.tpr = static_cast<double>(id_hits) / static_cast<double>(n_id);
  op.fpr = static_cast<double>(ood_hits) / static_cast<double>(n_ood);
  return op;
}

double fpr_at_95_tpr(std::span<const double> id_scores, std::span<const double> ood_scores) {
  return tpr95_operating_point(id_scores, ood_scores).fpr;
}

double fpr_at_95_tpr(std::span<const ScoredSample> samples) {
  Vector id, ood;
  split_scores(samples, id, ood);
  return fpr_at_95_tpr(id, ood);
}

double detection_error(std::span<const double> id_scores, std::span<const double> ood_scores) {
  const OperatingPoint op = tpr95_operating_point(id_scores, ood_scores);
  return 0.5 * (1.0 - op.tpr) + 0.5 * op.fpr;
}

double detection_error(std::span<const ScoredSample> samples) {
  Vector id, ood;
  split_scores(samples, id, ood);
  return detection_error(id, ood);
}

std::vector<ReliabilityBin> reliability_bins(std::span<const double> confidences,
                                             std::span<const std::uint8_t> correct, std::size_t n_bins) {
  if (confidences.size() != correct.size()) throw std::invalid_argument("ece: confidence and correctness lengths differ");
  if (confidences.empty()) throw std::invalid_argument("ece: no samples");
  if (n_bins == 0) throw std::invalid_argument("ece: need at least one bin");
  std::vector<ReliabilityBin> bins(n_bins);
  std::vector<double> conf_sum(n_bins, 0.0), hit_sum(n_bins, 0.0);
  for (std::size_t b = 0; b < n_bins; ++b) {
    bins[b].lower = static_cast<double>(b) / static_cast<double>(n_bins);
    bins[b].upper = static_cast<double>(b + 1) / static_cast<double>(n_bins);
  }
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("ece: confidence outside [0, 1]");
    auto b = static_cast<std::ptrdiff_t>(std::ceil(c * static_cast<double>(n_bins))) - 1;
    b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(n_bins) - 1);
    ++bins[b].count;
    conf_sum[b] += c;
    hit_sum[b] += correct[i] ? 1.0 : 0.0;
  }
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (bins[b].count == 0) continue;
    bins[b].accuracy = hit_sum[b] / static_cast<double>(bins[b].count);
    bins[b].confidence = conf_sum[b] / static_cast<double>(bins[b].count);
  }
  return bins;
}

double ece(std::span<const double> confidences, std::span<const std::uint8_t> correct, std::size_t n_bins) {
  const auto bins = reliability_bins(confidences, correct, n_bins);
  const double n = static_cast<double>(confidences.size());
  double total = 0.0;
  for (const auto& b : bins)
    if (b.count > 0) total += static_cast<double>(b.count) / n * std::abs(b.accuracy - b.confidence);
  return total;
}

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (predictions.empty()) throw std::invalid_argument("accuracy: no samples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

Classification classify(const Matrix& probabilities, std::span<const std::size_t> labels) {
  if (probabilities.rows() != labels.size()) throw std::invalid_argument("classify: length mismatch");
  Classification out;
  for (std::size_t r = 0; r < probabilities.rows(); ++r) {
    const std::size_t top = argmax(probabilities.row(r));
    out.predictions.push_back(top);
    out.confidences.push_back(std::clamp(probabilities(r, top), 0.0, 1.0));
    out.correct.push_back(top == labels[r] ? 1 : 0);
  }
  return out;
}

std::string metrics_csv_header() { return "detector,dataset,auroc,fpr95,detection,accuracy,ece,n_id,n_ood,seed"; }

std::string metrics_csv_row(const MetricsReport& r) {
  std::ostringstream out;
  out << r.detector << ',' << r.dataset << ',' << format_double(r.auroc) << ',' << format_double(r.fpr95) << ','
      << format_double(r.detection) << ',' << format_double(r.accuracy) << ',' << format_double(r.ece) << ','
      << r.n_id << ',' << r.n_ood << ',' << r.seed;
  return out.str();
}

void write_metrics(const std::filesystem::path& path, std::span<const MetricsReport> reports) {
  std::string text = metrics_csv_header() + "\n";
  for (const auto& r : reports) text += metrics_csv_row(r) + "\n";
  write_file(path, text);
}

}  // namespace drl
