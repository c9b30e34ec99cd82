#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "svfair/core_model.hpp"
#include "svfair/error.hpp"
#include "svfair/rng.hpp"

// Desk-scale training losses for a linear speaker encoder. Every loss returns
// its value together with hand-derived gradients; grad_check() compares them
// against central finite differences.
namespace svfair::lab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class LossKind { kSoftmax, kAmSoftmax, kAamSoftmax, kTriplet, kPrototypical };

inline constexpr LossKind kAllLosses[] = {LossKind::kSoftmax, LossKind::kAmSoftmax,
                                          LossKind::kAamSoftmax, LossKind::kTriplet,
                                          LossKind::kPrototypical};

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::kSoftmax: return "softmax";
    case LossKind::kAmSoftmax: return "am_softmax";
    case LossKind::kAamSoftmax: return "aam_softmax";
    case LossKind::kTriplet: return "triplet";
    case LossKind::kPrototypical: return "prototypical";
  }
  return "unknown";
}

inline std::optional<LossKind> parse_loss_kind(std::string_view s) {
  for (LossKind k : kAllLosses) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

inline bool is_classification(LossKind k) {
  return k == LossKind::kSoftmax || k == LossKind::kAmSoftmax || k == LossKind::kAamSoftmax;
}

struct LossConfig {
  LossKind kind = LossKind::kSoftmax;
  double margin = 0.2;          // AM: cosine margin, AAM: angular margin (radians)
  double scale = 30.0;          // margin losses
  double triplet_margin = 0.0;  // alpha
  int support_size = 2;         // utterances per speaker in a prototypical episode
  int batch_speakers = 10;      // speakers per prototypical episode
  int batch_size = 32;          // examples (classification) or triplets per step

  void validate() const {
    if (!(margin >= 0.0)) throw Error(ErrorKind::kInvalidMargin, "margin must be >= 0");
    if (kind == LossKind::kAamSoftmax && !(margin < std::numbers::pi / 2)) {
      throw Error(ErrorKind::kInvalidMargin, "angular margin must be below pi/2");
    }
    if (!(scale > 0.0)) throw Error(ErrorKind::kInvalidConfig, "scale must be > 0");
    if (!(triplet_margin >= 0.0)) throw Error(ErrorKind::kInvalidMargin, "triplet margin must be >= 0");
    if (support_size < 2) throw Error(ErrorKind::kInvalidConfig, "support size must be >= 2");
    if (batch_speakers < 1) throw Error(ErrorKind::kInvalidConfig, "batch speakers must be >= 1");
    if (batch_size < 1) throw Error(ErrorKind::kInvalidConfig, "batch size must be >= 1");
  }
};

struct EncoderParams {
  Matrix weight;      // embedding_dim x input_dim
  Matrix classifier;  // speakers x embedding_dim; empty for metric-learning losses
};

struct ToyBatch {
  Matrix inputs;  // batch x input_dim
  std::vector<int> speaker_labels;
  std::vector<GroupAssignment> group_labels;
};

struct LossOutput {
  double value = 0.0;
  Matrix grad_embeddings;
  std::optional<Matrix> grad_classifier;
  std::optional<Matrix> grad_prototypes;
};

/// Embeddings as rows: inputs * weight^T.
inline Matrix encode(const Matrix& weight, const Matrix& inputs) {
  if (inputs.cols() != weight.cols()) {
    throw Error(ErrorKind::kDimensionMismatch,
                "input dim " + std::to_string(inputs.cols()) + ", encoder expects " +
                    std::to_string(weight.cols()));
  }
  return inputs * weight.transpose();
}

inline Matrix encode_batch(const EncoderParams& params, const ToyBatch& batch) {
  return encode(params.weight, batch.inputs);
}

/// Row-wise unit normalization. `norms` receives each row's length.
inline Matrix row_normalize(const Matrix& m, Vector* norms = nullptr) {
  Vector n = m.rowwise().norm();
  for (Eigen::Index i = 0; i < n.size(); ++i) {
    if (!(n(i) > 0.0)) throw Error(ErrorKind::kZeroNormVector, "row " + std::to_string(i));
  }
  Matrix out = n.cwiseInverse().asDiagonal() * m;
  if (norms) *norms = std::move(n);
  return out;
}

namespace detail {

// Gradient w.r.t. the raw rows given the gradient w.r.t. their normalized
// versions: (g - (g.u) u) / |x| per row.
inline Matrix normalize_backward(const Matrix& grad_unit, const Matrix& unit, const Vector& norms) {
  const Vector radial = (grad_unit.cwiseProduct(unit)).rowwise().sum();
  return norms.cwiseInverse().asDiagonal() * (grad_unit - radial.asDiagonal() * unit);
}

inline void check_labels(std::span<const int> labels, Eigen::Index rows, Eigen::Index classes) {
  if (static_cast<Eigen::Index>(labels.size()) != rows) {
    throw Error(ErrorKind::kLengthMismatch, std::to_string(labels.size()) + " labels for " +
                                                std::to_string(rows) + " embeddings");
  }
  if (classes < 2) throw Error(ErrorKind::kInvalidConfig, "need at least 2 classes");
  for (int y : labels) {
    if (y < 0 || y >= classes) throw Error(ErrorKind::kLabelOutOfRange, std::to_string(y));
  }
}

struct CrossEntropy {
  double value;
  Matrix grad_logits;
};

// Mean of -log softmax(logits)_y over rows, with the gradient already divided
// by the batch size.
inline CrossEntropy cross_entropy(const Matrix& logits, std::span<const int> labels) {
  const Eigen::Index rows = logits.rows();
  CrossEntropy ce{0.0, Matrix(rows, logits.cols())};
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double top = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd shifted = (logits.row(i).array() - top).exp().matrix();
    const double sum = shifted.sum();
    ce.value += top + std::log(sum) - logits(i, labels[i]);
    ce.grad_logits.row(i) = shifted / sum;
    ce.grad_logits(i, labels[i]) -= 1.0;
  }
  ce.value /= static_cast<double>(rows);
  ce.grad_logits /= static_cast<double>(rows);
  return ce;
}

struct TargetLogit {
  double value;       // target logit divided by the scale
  double derivative;  // d value / d cos(theta)
};

// Scaled-cosine softmax with a margin applied to the target logit only. All
// three classification losses with normalized inputs share this path.
template <typename TargetFn>
LossOutput margin_softmax(const Matrix& embeddings, std::span<const int> labels,
                          const Matrix& classifier, double scale, TargetFn target) {
  if (embeddings.cols() != classifier.cols()) {
    throw Error(ErrorKind::kDimensionMismatch, "embedding and classifier widths differ");
  }
  check_labels(labels, embeddings.rows(), classifier.rows());
  Vector e_norms, w_norms;
  const Matrix e_unit = row_normalize(embeddings, &e_norms);
  const Matrix w_unit = row_normalize(classifier, &w_norms);
  const Matrix cosines = e_unit * w_unit.transpose();

  Matrix logits = scale * cosines;
  std::vector<double> target_slope(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const TargetLogit t = target(cosines(row, labels[i]));
    logits(row, labels[i]) = scale * t.value;
    target_slope[i] = t.derivative;
  }
  const CrossEntropy ce = cross_entropy(logits, labels);

  Matrix grad_cos = scale * ce.grad_logits;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    grad_cos(static_cast<Eigen::Index>(i), labels[i]) *= target_slope[i];
  }
  LossOutput out;
  out.value = ce.value;
  out.grad_embeddings = normalize_backward(grad_cos * w_unit, e_unit, e_norms);
  out.grad_classifier = normalize_backward(grad_cos.transpose() * e_unit, w_unit, w_norms);
  return out;
}

}  // namespace detail

/// Plain softmax cross-entropy over logits = embeddings * classifier^T.
inline LossOutput softmax_ce(const Matrix& embeddings, std::span<const int> labels,
                             const Matrix& classifier) {
  if (embeddings.cols() != classifier.cols()) {
    throw Error(ErrorKind::kDimensionMismatch, "embedding and classifier widths differ");
  }
  detail::check_labels(labels, embeddings.rows(), classifier.rows());
  const detail::CrossEntropy ce = detail::cross_entropy(embeddings * classifier.transpose(), labels);
  LossOutput out;
  out.value = ce.value;
  out.grad_embeddings = ce.grad_logits * classifier;
  out.grad_classifier = ce.grad_logits.transpose() * embeddings;
  return out;
}

/// Additive cosine margin: target logit s*(cos - m), others s*cos.
inline LossOutput am_softmax(const Matrix& embeddings, std::span<const int> labels,
                             const Matrix& classifier, double margin, double scale) {
  if (!(margin >= 0.0)) throw Error(ErrorKind::kInvalidMargin, "margin must be >= 0");
  return detail::margin_softmax(embeddings, labels, classifier, scale, [margin](double c) {
    return detail::TargetLogit{c - margin, 1.0};
  });
}

/// Cosine bound beyond which the angular-margin gradient is treated as zero.
inline constexpr double kAngularClamp = 1.0 - 1e-7;

/// Additive angular margin: target logit s*cos(theta + m), expanded as
/// cos(theta) cos(m) - sin(theta) sin(m). The value uses the exact cosine;
/// within 1e-7 of |cos| = 1 the derivative of the target logit is zero.
inline LossOutput aam_softmax(const Matrix& embeddings, std::span<const int> labels,
                              const Matrix& classifier, double margin, double scale) {
  if (!(margin >= 0.0) || !(margin < std::numbers::pi / 2)) {
    throw Error(ErrorKind::kInvalidMargin, "angular margin must lie in [0, pi/2)");
  }
  const double cos_m = std::cos(margin), sin_m = std::sin(margin);
  return detail::margin_softmax(embeddings, labels, classifier, scale, [=](double c) {
    const double sin_t = std::sqrt(std::max(0.0, 1.0 - c * c));
    const double value = c * cos_m - sin_t * sin_m;
    if (std::abs(c) > kAngularClamp) return detail::TargetLogit{value, 0.0};
    return detail::TargetLogit{value, cos_m + c * sin_m / sin_t};
  });
}

/// Triplet loss over rows laid out as (anchor, positive, negative) triples:
/// mean of max(0, |a-p|^2 - |a-n|^2 + alpha). At the kink the zero branch is
/// taken.
inline LossOutput triplet_loss(const Matrix& triples, double alpha) {
  if (triples.rows() == 0 || triples.rows() % 3 != 0) {
    throw Error(ErrorKind::kDimensionMismatch,
                std::to_string(triples.rows()) + " rows is not a whole number of triples");
  }
  const Eigen::Index count = triples.rows() / 3;
  LossOutput out;
  out.grad_embeddings = Matrix::Zero(triples.rows(), triples.cols());
  const double inv = 1.0 / static_cast<double>(count);
  for (Eigen::Index t = 0; t < count; ++t) {
    const auto a = triples.row(3 * t), p = triples.row(3 * t + 1), n = triples.row(3 * t + 2);
    const double hinge = (a - p).squaredNorm() - (a - n).squaredNorm() + alpha;
    if (hinge <= 0.0) continue;
    out.value += hinge;
    out.grad_embeddings.row(3 * t) = 2.0 * inv * (n - p);
    out.grad_embeddings.row(3 * t + 1) = -2.0 * inv * (a - p);
    out.grad_embeddings.row(3 * t + 2) = 2.0 * inv * (a - n);
  }
  out.value *= inv;
  return out;
}

inline LossOutput triplet_loss(const Vector& anchor, const Vector& positive, const Vector& negative,
                               double alpha) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "triplet members differ in dimension");
  }
  Matrix rows(3, anchor.size());
  rows.row(0) = anchor.transpose();
  rows.row(1) = positive.transpose();
  rows.row(2) = negative.transpose();
  return triplet_loss(rows, alpha);
}

/// Mean of each speaker's support embeddings; each block must hold exactly
/// support_size - 1 rows.
inline Matrix compute_prototypes(std::span<const Matrix> supports_by_speaker, int support_size) {
  if (supports_by_speaker.empty()) throw Error(ErrorKind::kSupportSizeMismatch, "no speakers");
  const Eigen::Index dim = supports_by_speaker.front().cols();
  Matrix protos(static_cast<Eigen::Index>(supports_by_speaker.size()), dim);
  for (std::size_t k = 0; k < supports_by_speaker.size(); ++k) {
    const Matrix& s = supports_by_speaker[k];
    if (s.rows() != support_size - 1) {
      throw Error(ErrorKind::kSupportSizeMismatch,
                  "speaker " + std::to_string(k) + " has " + std::to_string(s.rows()) +
                      " supports, expected " + std::to_string(support_size - 1));
    }
    if (s.cols() != dim) throw Error(ErrorKind::kDimensionMismatch, "support widths differ");
    protos.row(static_cast<Eigen::Index>(k)) = s.colwise().mean();
  }
  return protos;
}

/// Cross-entropy of query i against prototype i with logits -|q_i - c_k|^2.
/// grad_embeddings is w.r.t. the queries, grad_prototypes w.r.t. the
/// prototypes.
inline LossOutput prototypical_loss(const Matrix& queries, const Matrix& prototypes) {
  if (queries.rows() != prototypes.rows() || queries.cols() != prototypes.cols() ||
      queries.rows() == 0) {
    throw Error(ErrorKind::kDimensionMismatch, "need one query and one prototype per speaker");
  }
  const Eigen::Index n = queries.rows();
  Matrix logits(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < n; ++k) logits(i, k) = -(queries.row(i) - prototypes.row(k)).squaredNorm();
  }
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(i);
  const detail::CrossEntropy ce = detail::cross_entropy(logits, labels);

  // d(-|q_i - c_k|^2)/dq_i = -2(q_i - c_k), and the opposite for c_k.
  const Vector row_sum = ce.grad_logits.rowwise().sum();
  const Vector col_sum = ce.grad_logits.colwise().sum().transpose();
  LossOutput out;
  out.value = ce.value;
  out.grad_embeddings = -2.0 * (row_sum.asDiagonal() * queries - ce.grad_logits * prototypes);
  out.grad_prototypes = 2.0 * (ce.grad_logits.transpose() * queries - col_sum.asDiagonal() * prototypes);
  return out;
}

/// Full episode: `embeddings` holds speakers * support_size rows,
/// speaker-major, the last row of each block being the query. Gradients flow
/// back through the prototype means to every support row.
inline LossOutput prototypical_episode(const Matrix& embeddings, int speakers, int support_size) {
  if (support_size < 2) throw Error(ErrorKind::kSupportSizeMismatch, "support size must be >= 2");
  if (speakers < 1 || embeddings.rows() != static_cast<Eigen::Index>(speakers) * support_size) {
    throw Error(ErrorKind::kSupportSizeMismatch,
                std::to_string(embeddings.rows()) + " rows for " + std::to_string(speakers) +
                    " speakers of " + std::to_string(support_size));
  }
  const Eigen::Index m = support_size;
  std::vector<Matrix> supports;
  Matrix queries(speakers, embeddings.cols());
  for (Eigen::Index k = 0; k < speakers; ++k) {
    supports.emplace_back(embeddings.middleRows(k * m, m - 1));
    queries.row(k) = embeddings.row(k * m + m - 1);
  }
  const Matrix protos = compute_prototypes(supports, support_size);
  LossOutput inner = prototypical_loss(queries, protos);

  LossOutput out;
  out.value = inner.value;
  out.grad_embeddings = Matrix(embeddings.rows(), embeddings.cols());
  const double share = 1.0 / static_cast<double>(m - 1);
  for (Eigen::Index k = 0; k < speakers; ++k) {
    for (Eigen::Index j = 0; j + 1 < m; ++j) out.grad_embeddings.row(k * m + j) = share * inner.grad_prototypes->row(k);
    out.grad_embeddings.row(k * m + m - 1) = inner.grad_embeddings.row(k);
  }
  return out;
}

/// Dispatches on config.kind. `labels` and `classifier` are used by the
/// classification losses; prototypical batches are `batch_speakers` x
/// `support_size` speaker-major blocks, triplet batches are triple-interleaved.
inline LossOutput evaluate_loss(const LossConfig& cfg, const Matrix& embeddings,
                                std::span<const int> labels, const Matrix& classifier) {
  switch (cfg.kind) {
    case LossKind::kSoftmax: return softmax_ce(embeddings, labels, classifier);
    case LossKind::kAmSoftmax: return am_softmax(embeddings, labels, classifier, cfg.margin, cfg.scale);
    case LossKind::kAamSoftmax: return aam_softmax(embeddings, labels, classifier, cfg.margin, cfg.scale);
    case LossKind::kTriplet: return triplet_loss(embeddings, cfg.triplet_margin);
    case LossKind::kPrototypical:
      return prototypical_episode(embeddings, static_cast<int>(embeddings.rows() / cfg.support_size),
                                  cfg.support_size);
  }
  throw Error(ErrorKind::kInvalidConfig, "unknown loss kind");
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

inline constexpr double kFiniteDifferenceStep = 1e-4;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

/// A random problem instance for one loss kind.
struct GradCheckCase {
  LossConfig config;
  Matrix embeddings;
  std::vector<int> labels;
  Matrix classifier;
};

namespace detail {

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = sd * rng.normal();
  }
  return m;
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

// Rejects instances where a finite-difference probe could cross a kink or
// clamp edge.
inline bool well_conditioned(const GradCheckCase& c) {
  const double guard = 1e-2;
  if (c.config.kind == LossKind::kTriplet) {
    bool any_active = false;
    for (Eigen::Index t = 0; t < c.embeddings.rows() / 3; ++t) {
      const auto a = c.embeddings.row(3 * t), p = c.embeddings.row(3 * t + 1), n = c.embeddings.row(3 * t + 2);
      const double hinge = (a - p).squaredNorm() - (a - n).squaredNorm() + c.config.triplet_margin;
      if (std::abs(hinge) < guard) return false;
      any_active = any_active || hinge > 0.0;
    }
    return any_active;
  }
  if (c.config.kind == LossKind::kAamSoftmax) {
    const Matrix cosines = row_normalize(c.embeddings) * row_normalize(c.classifier).transpose();
    for (std::size_t i = 0; i < c.labels.size(); ++i) {
      if (std::abs(cosines(static_cast<Eigen::Index>(i), c.labels[i])) > 1.0 - guard) return false;
    }
  }
  return true;
}

}  // namespace detail

/// Draws a random, well-conditioned instance of `kind` from `seed`.
inline GradCheckCase random_grad_check_case(LossKind kind, std::uint64_t seed) {
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(kind)));
  while (true) {
    GradCheckCase c;
    c.config.kind = kind;
    const int dim = detail::uniform_int(rng, 2, 6);
    switch (kind) {
      case LossKind::kSoftmax:
      case LossKind::kAmSoftmax:
      case LossKind::kAamSoftmax: {
        const int batch = detail::uniform_int(rng, 1, 6);
        const int classes = detail::uniform_int(rng, 2, 5);
        c.config.margin = 0.05 + 0.45 * rng.uniform();
        c.config.scale = 1.0 + 4.0 * rng.uniform();
        c.embeddings = detail::random_matrix(rng, batch, dim);
        c.classifier = detail::random_matrix(rng, classes, dim);
        for (int i = 0; i < batch; ++i) c.labels.push_back(detail::uniform_int(rng, 0, classes - 1));
        break;
      }
      case LossKind::kTriplet: {
        const int triples = detail::uniform_int(rng, 1, 4);
        c.config.triplet_margin = rng.uniform();
        c.embeddings = detail::random_matrix(rng, 3 * triples, dim);
        break;
      }
      case LossKind::kPrototypical: {
        c.config.batch_speakers = detail::uniform_int(rng, 2, 4);
        c.config.support_size = detail::uniform_int(rng, 2, 4);
        c.embeddings = detail::random_matrix(rng, c.config.batch_speakers * c.config.support_size, dim, 0.7);
        break;
      }
    }
    if (detail::well_conditioned(c)) return c;
  }
}

/// Central finite differences of the loss value with respect to every
/// embedding entry and, for classification losses, every classifier entry.
struct NumericGradients {
  Matrix embeddings;
  std::optional<Matrix> classifier;
};

inline NumericGradients numeric_gradients(const GradCheckCase& c, double h = kFiniteDifferenceStep) {
  auto differentiate = [&](Matrix probe, bool probe_classifier) {
    Matrix grad(probe.rows(), probe.cols());
    auto value = [&] {
      return probe_classifier ? evaluate_loss(c.config, c.embeddings, c.labels, probe).value
                              : evaluate_loss(c.config, probe, c.labels, c.classifier).value;
    };
    for (Eigen::Index i = 0; i < probe.rows(); ++i) {
      for (Eigen::Index j = 0; j < probe.cols(); ++j) {
        const double saved = probe(i, j);
        probe(i, j) = saved + h;
        const double up = value();
        probe(i, j) = saved - h;
        const double down = value();
        probe(i, j) = saved;
        grad(i, j) = (up - down) / (2.0 * h);
      }
    }
    return grad;
  };
  NumericGradients out;
  out.embeddings = differentiate(c.embeddings, false);
  if (is_classification(c.config.kind)) out.classifier = differentiate(c.classifier, true);
  return out;
}

/// Relative error between analytic and numeric gradients, taken per
/// gradient tensor with Frobenius norms: |a - n| / max(1e-8, |a| + |n|).
/// The largest value over the checked tensors is returned. Per-entry ratios
/// are not used because an entry near zero turns the O(h^2) truncation
/// error into an arbitrarily large ratio.
inline double grad_check(const GradCheckCase& c) {
  const LossOutput analytic = evaluate_loss(c.config, c.embeddings, c.labels, c.classifier);
  const NumericGradients numeric = numeric_gradients(c);
  auto tensor_error = [](const Matrix& a, const Matrix& n) {
    return (a - n).norm() / std::max(1e-8, a.norm() + n.norm());
  };
  double worst = tensor_error(analytic.grad_embeddings, numeric.embeddings);
  if (numeric.classifier) worst = std::max(worst, tensor_error(*analytic.grad_classifier, *numeric.classifier));
  return worst;
}

inline double grad_check(LossKind kind, std::uint64_t seed) {
  return grad_check(random_grad_check_case(kind, seed));
}

// ---------------------------------------------------------------------------
// Toy trainer

/// Inputs with their speaker index (0-based, dense) and group membership.
struct ToyDataset {
  Matrix inputs;  // samples x input_dim
  std::vector<int> speakers;
  std::vector<GroupAssignment> groups;
  int speaker_count = 0;
};

struct TrainOptions {
  int epochs = 30;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;
  int embedding_dim = 32;
  int batches_per_epoch = 0;  // 0: one pass worth of samples
  double decay_factor = 0.5;
  int decay_every = 10;
};

struct TrainResult {
  EncoderParams params;
  std::vector<double> loss_history;  // mean batch loss per epoch
};

/// Raised when a batch loss or an update turns non-finite. Carries the last
/// parameters that produced a finite loss and the history up to that point.
class TrainingAborted : public Error {
 public:
  TrainingAborted(int epoch, TrainResult last_good)
      : Error(ErrorKind::kNonFiniteLoss, "epoch " + std::to_string(epoch)),
        epoch_(epoch),
        last_good_(std::move(last_good)) {}

  int epoch() const { return epoch_; }
  const TrainResult& last_good() const { return last_good_; }

 private:
  int epoch_;
  TrainResult last_good_;
};

namespace detail {

struct Batch {
  std::vector<std::size_t> rows;  // dataset sample indices in loss layout
  std::vector<int> labels;
};

inline void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

// One epoch's batch schedule, drawn once from the seed and replayed every
// epoch.
inline std::vector<Batch> plan_batches(const ToyDataset& data, const LossConfig& cfg, int batches,
                                       Rng& rng) {
  std::vector<std::vector<std::size_t>> by_speaker(static_cast<std::size_t>(data.speaker_count));
  for (std::size_t i = 0; i < data.speakers.size(); ++i) {
    by_speaker[static_cast<std::size_t>(data.speakers[i])].push_back(i);
  }
  const std::size_t n = data.speakers.size();
  std::vector<Batch> plan;

  if (is_classification(cfg.kind)) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    shuffle(order, rng);
    const auto size = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t b = 0; b < order.size(); b += size) {
      Batch batch;
      for (std::size_t i = b; i < std::min(order.size(), b + size); ++i) {
        batch.rows.push_back(order[i]);
        batch.labels.push_back(data.speakers[order[i]]);
      }
      plan.push_back(std::move(batch));
    }
    return plan;
  }

  if (cfg.kind == LossKind::kTriplet) {
    std::vector<std::size_t> anchors;
    for (std::size_t i = 0; i < n; ++i) {
      if (by_speaker[static_cast<std::size_t>(data.speakers[i])].size() >= 2) anchors.push_back(i);
    }
    const auto present = std::count_if(by_speaker.begin(), by_speaker.end(),
                                       [](const auto& u) { return !u.empty(); });
    if (anchors.empty() || present < 2) {
      throw Error(ErrorKind::kInvalidConfig, "triplets need 2 speakers, one with 2 utterances");
    }
    shuffle(anchors, rng);
    const auto size = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t b = 0; b < anchors.size(); b += size) {
      Batch batch;
      for (std::size_t k = b; k < std::min(anchors.size(), b + size); ++k) {
        const std::size_t a = anchors[k];
        const auto& own = by_speaker[static_cast<std::size_t>(data.speakers[a])];
        std::size_t p;
        do {
          p = own[rng.below(own.size())];
        } while (p == a);
        std::size_t neg;
        do {
          neg = rng.below(n);
        } while (data.speakers[neg] == data.speakers[a]);
        batch.rows.insert(batch.rows.end(), {a, p, neg});
      }
      plan.push_back(std::move(batch));
    }
    return plan;
  }

  // Prototypical episodes.
  std::vector<std::size_t> eligible;
  for (std::size_t k = 0; k < by_speaker.size(); ++k) {
    if (by_speaker[k].size() >= static_cast<std::size_t>(cfg.support_size)) eligible.push_back(k);
  }
  const auto speakers = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_speakers), eligible.size());
  if (speakers < 2) {
    throw Error(ErrorKind::kInvalidConfig, "prototypical episodes need 2 speakers with " +
                                               std::to_string(cfg.support_size) + " utterances");
  }
  const std::size_t per_episode = speakers * static_cast<std::size_t>(cfg.support_size);
  const int episodes = batches > 0 ? batches : static_cast<int>((n + per_episode - 1) / per_episode);
  for (int e = 0; e < episodes; ++e) {
    std::vector<std::size_t> pool = eligible;
    Batch batch;
    for (std::size_t s = 0; s < speakers; ++s) {
      std::swap(pool[s], pool[s + rng.below(pool.size() - s)]);
      std::vector<std::size_t> utts = by_speaker[pool[s]];
      for (int j = 0; j < cfg.support_size; ++j) {
        const auto jj = static_cast<std::size_t>(j);
        std::swap(utts[jj], utts[jj + rng.below(utts.size() - jj)]);
        batch.rows.push_back(utts[jj]);
      }
    }
    plan.push_back(std::move(batch));
  }
  return plan;
}

inline bool all_finite(const EncoderParams& p) {
  return p.weight.allFinite() && (p.classifier.size() == 0 || p.classifier.allFinite());
}

}  // namespace detail

/// Initial encoder: Gaussian weights with variance 1/fan_in, plus a
/// classifier head for the classification losses.
inline EncoderParams init_encoder(Eigen::Index input_dim, int embedding_dim, int speakers,
                                  LossKind kind, Rng& rng) {
  EncoderParams p;
  p.weight = detail::random_matrix(rng, embedding_dim, input_dim, 1.0 / std::sqrt(static_cast<double>(input_dim)));
  if (is_classification(kind)) {
    p.classifier = detail::random_matrix(rng, speakers, embedding_dim, 1.0 / std::sqrt(static_cast<double>(embedding_dim)));
  }
  return p;
}

/// Gradient descent on a linear encoder with step decay (learning rate times
/// decay_factor every decay_every epochs). Sequential and bit-reproducible
/// for a fixed seed.
inline TrainResult train_toy(const ToyDataset& data, const LossConfig& cfg, const TrainOptions& opt) {
  cfg.validate();
  if (data.speaker_count < 2) throw Error(ErrorKind::kInvalidConfig, "need at least 2 speakers");
  if (static_cast<Eigen::Index>(data.speakers.size()) != data.inputs.rows()) {
    throw Error(ErrorKind::kLengthMismatch, "speaker labels and inputs differ in length");
  }
  if (opt.epochs < 0 || opt.embedding_dim < 1 || !(opt.learning_rate >= 0.0)) {
    throw Error(ErrorKind::kInvalidConfig, "epochs, embedding_dim and learning_rate must be valid");
  }
  Rng rng(opt.seed);
  TrainResult result;
  result.params = init_encoder(data.inputs.cols(), opt.embedding_dim, data.speaker_count, cfg.kind, rng);
  const auto plan = detail::plan_batches(data, cfg, opt.batches_per_epoch, rng);

  LossConfig step_cfg = cfg;
  EncoderParams& params = result.params;
  EncoderParams last_good = params;  // most recent parameters with a finite loss
  auto abort = [&](int epoch) {
    TrainResult partial{last_good, result.loss_history};
    throw TrainingAborted(epoch, std::move(partial));
  };
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    const double lr = opt.learning_rate *
                      std::pow(opt.decay_factor, static_cast<double>(epoch / std::max(1, opt.decay_every)));
    double epoch_loss = 0.0;
    for (const auto& batch : plan) {
      Matrix x(static_cast<Eigen::Index>(batch.rows.size()), data.inputs.cols());
      for (std::size_t r = 0; r < batch.rows.size(); ++r) {
        x.row(static_cast<Eigen::Index>(r)) = data.inputs.row(static_cast<Eigen::Index>(batch.rows[r]));
      }
      const Matrix emb = encode(params.weight, x);
      if (cfg.kind == LossKind::kPrototypical) {
        step_cfg.batch_speakers = static_cast<int>(batch.rows.size()) / cfg.support_size;
      }
      const LossOutput loss = evaluate_loss(step_cfg, emb, batch.labels, params.classifier);
      if (!std::isfinite(loss.value)) abort(epoch);
      last_good = params;

      params.weight -= lr * (loss.grad_embeddings.transpose() * x);
      if (loss.grad_classifier) params.classifier -= lr * *loss.grad_classifier;
      if (!detail::all_finite(params)) abort(epoch);
      epoch_loss += loss.value;
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(plan.size()));
  }
  return result;
}

}  // namespace svfair::lab
