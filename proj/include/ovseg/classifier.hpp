#pragma once

// Training-set synthesis and a small fully connected binary classifier
// [in, 128, 64, 32, 1] with ReLU hidden units, dropout and a logistic output.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ovseg/base64.hpp"
#include "ovseg/error.hpp"
#include "ovseg/features.hpp"
#include "ovseg/rng.hpp"
#include "ovseg/testkit.hpp"
#include "ovseg/volume.hpp"
#include "ovseg/volume_io.hpp"

namespace ovseg {

struct TrainingExample {
  std::vector<double> features;  ///< shape-index slot holds the raw R²
  int label = 0;                 ///< 1 oversegmented, 0 natural gap
  ShapeClass shape_class = ShapeClass::Linear;
  double r2 = 1.0;
  std::string volume_id;
  Label label_a = kBackground;
  Label label_b = kBackground;
  int gap_first = 0;
  bool synthesized = false;
};

struct TrainingSet {
  FeatureVariant variant = FeatureVariant::Default;
  bool shape_features = true;  ///< false for plain numeric data without a shape slot
  std::vector<TrainingExample> examples;
};

struct NamedVolume {
  std::string id;
  LabelVolume volume;
};

struct SynthesisConfig {
  std::size_t true_per_volume = 20;
  int min_height = 4;
  // Also label natural candidates of the gap-injected volume that involve an injected cell.
  bool injected_negatives = true;
  FeatureConfig features{};
};

inline TrainingExample make_example(const PairFeatures& f, FeatureVariant v, int label,
                                    const std::string& id, const CandidatePair& p, bool synthesized) {
  return {assemble_features(f, v), label, f.shape.shape_class, f.shape.r2, id,
          p.label_a, p.label_b, p.gap_first, synthesized};
}

/// True cases come from deleting one interior layer of randomly chosen cells;
/// false cases are every screened pair of the untouched volume.
inline TrainingSet synthesize_training_set(const std::vector<NamedVolume>& volumes,
                                           const SynthesisConfig& cfg, std::uint64_t seed) {
  TrainingSet set;
  set.variant = cfg.features.variant;
  Rng rng(seed);
  for (const auto& nv : volumes) {
    const std::uint64_t vseed = rng.next();
    LabelVolume injected = nv.volume;
    const auto gaps = testkit::inject_random_gaps(injected, cfg.true_per_volume, vseed, cfg.min_height);
    const CellIndex injected_index = build_cell_index(injected);
    FeatureExtractor fx_true(injected_index, cfg.features);
    for (const auto& g : gaps) {
      const CellRecord& a = injected_index.at(g.cell);
      const CellRecord& b = injected_index.at(g.fresh);
      const CandidatePair p{a.label, b.label, g.layer, 1, a.bottom_mask(), b.top_mask()};
      set.examples.push_back(make_example(fx_true.extract(p), set.variant, 1, nv.id, p, true));
    }
    if (cfg.injected_negatives) {
      std::set<Label> touched;
      std::set<std::pair<Label, Label>> injected_pairs;
      for (const auto& g : gaps) {
        touched.insert(g.cell);
        touched.insert(g.fresh);
        injected_pairs.emplace(g.cell, g.fresh);
      }
      for (const auto& p : screen_candidates(injected_index, cfg.features)) {
        if (injected_pairs.contains({p.label_a, p.label_b})) continue;
        if (!touched.contains(p.label_a) && !touched.contains(p.label_b)) continue;
        set.examples.push_back(make_example(fx_true.extract(p), set.variant, 0, nv.id, p, true));
      }
    }
    const CellIndex truth_index = build_cell_index(nv.volume);
    FeatureExtractor fx_false(truth_index, cfg.features);
    for (const auto& p : screen_candidates(truth_index, cfg.features)) {
      set.examples.push_back(make_example(fx_false.extract(p), set.variant, 0, nv.id, p, false));
    }
  }
  return set;
}

struct Hyperparams {
  std::vector<int> hidden{128, 64, 32};
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 64;
  int max_epochs = 100;
  int patience = 10;
  double validation_fraction = 0.1;
  double dropout = 0.3;
  double threshold = 0.5;
  bool balance_classes = false;
  bool full_batch = false;

  nlohmann::json to_json() const {
    return {{"hidden", hidden},          {"learning_rate", learning_rate},
            {"beta1", beta1},            {"beta2", beta2},
            {"adam_eps", adam_eps},      {"batch_size", batch_size},
            {"max_epochs", max_epochs},  {"patience", patience},
            {"validation_fraction", validation_fraction},
            {"dropout", dropout},        {"threshold", threshold},
            {"balance_classes", balance_classes}, {"full_batch", full_batch}};
  }
};

/// Per-feature standardization. Zero-variance features keep stddev 1.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<std::size_t> constant;

  static FeatureScaler fit(const std::vector<const std::vector<double>*>& rows) {
    if (rows.empty()) throw InvalidArgument("cannot fit a scaler on zero rows");
    const std::size_t d = rows.front()->size();
    FeatureScaler s;
    s.mean.assign(d, 0.0);
    s.stddev.assign(d, 0.0);
    for (const auto* r : rows)
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += (*r)[j];
    for (auto& m : s.mean) m /= static_cast<double>(rows.size());
    for (const auto* r : rows)
      for (std::size_t j = 0; j < d; ++j) s.stddev[j] += ((*r)[j] - s.mean[j]) * ((*r)[j] - s.mean[j]);
    for (std::size_t j = 0; j < d; ++j) {
      s.stddev[j] = std::sqrt(s.stddev[j] / static_cast<double>(rows.size()));
      if (!(s.stddev[j] > 1e-12)) {
        s.stddev[j] = 1.0;
        s.constant.push_back(j);
      }
    }
    return s;
  }

  std::vector<double> transform(const std::vector<double>& x) const {
    std::vector<double> z(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) z[j] = (x[j] - mean[j]) / stddev[j];
    return z;
  }

  std::vector<double> inverse(const std::vector<double>& z) const {
    std::vector<double> x(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) x[j] = z[j] * stddev[j] + mean[j];
    return x;
  }
};

struct DenseLayer {
  Eigen::MatrixXd w;  ///< out x in
  Eigen::VectorXd b;
};

struct MlpModel {
  std::vector<int> layer_sizes;
  std::vector<DenseLayer> layers;
  double dropout = 0.3;
  FeatureScaler scaler;
  ShapeNormalizer normalizer;
  double threshold = 0.5;
  FeatureVariant variant = FeatureVariant::Default;
  bool shape_features = true;
  std::uint64_t seed = 0;

  std::size_t input_size() const { return static_cast<std::size_t>(layer_sizes.front()); }

  static MlpModel zeros(std::vector<int> sizes) {
    if (sizes.size() < 2 || sizes.back() != 1) throw InvalidArgument("layer sizes must end in 1");
    MlpModel m;
    m.layer_sizes = std::move(sizes);
    for (std::size_t l = 1; l < m.layer_sizes.size(); ++l) {
      m.layers.push_back({Eigen::MatrixXd::Zero(m.layer_sizes[l], m.layer_sizes[l - 1]),
                          Eigen::VectorXd::Zero(m.layer_sizes[l])});
    }
    const auto in = static_cast<std::size_t>(m.layer_sizes.front());
    m.scaler.mean.assign(in, 0.0);
    m.scaler.stddev.assign(in, 1.0);
    return m;
  }

  /// He-uniform weights, zero biases.
  static MlpModel initialized(std::vector<int> sizes, Rng& rng) {
    MlpModel m = zeros(std::move(sizes));
    for (auto& layer : m.layers) {
      const double a = std::sqrt(6.0 / static_cast<double>(layer.w.cols()));
      for (Eigen::Index i = 0; i < layer.w.rows(); ++i)
        for (Eigen::Index j = 0; j < layer.w.cols(); ++j) layer.w(i, j) = rng.uniform(-a, a);
    }
    return m;
  }

  /// Output logits for standardized inputs (one example per row).
  Eigen::VectorXd logits(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd a = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      Eigen::MatrixXd z = a * layers[l].w.transpose();
      z.rowwise() += layers[l].b.transpose();
      a = l + 1 < layers.size() ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
    }
    return a.col(0);
  }
};

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// Binary cross-entropy from a logit, stable for large |z|.
inline double bce_logit(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

struct Gradients {
  double loss = 0.0;
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;
};

/// Weighted mean cross-entropy over a batch and its gradient. `masks` holds
/// one multiplier matrix (batch x width) per hidden layer, or is null for no
/// dropout.
inline Gradients loss_and_gradient(const MlpModel& m, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                   const Eigen::VectorXd& weight,
                                   const std::vector<Eigen::MatrixXd>* masks = nullptr) {
  const std::size_t L = m.layers.size();
  std::vector<Eigen::MatrixXd> acts{x}, pre;
  for (std::size_t l = 0; l < L; ++l) {
    Eigen::MatrixXd z = acts.back() * m.layers[l].w.transpose();
    z.rowwise() += m.layers[l].b.transpose();
    pre.push_back(z);
    if (l + 1 < L) {
      Eigen::MatrixXd a = z.cwiseMax(0.0);
      if (masks) a = a.cwiseProduct((*masks)[l]);
      acts.push_back(std::move(a));
    }
  }
  const double wsum = weight.sum();
  Gradients g;
  g.w.resize(L);
  g.b.resize(L);
  Eigen::MatrixXd dz(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double z = pre.back()(i, 0);
    g.loss += weight(i) * bce_logit(z, y(i));
    dz(i, 0) = weight(i) * (sigmoid(z) - y(i)) / wsum;
  }
  g.loss /= wsum;
  for (std::size_t l = L; l-- > 0;) {
    g.w[l] = dz.transpose() * acts[l];
    g.b[l] = dz.colwise().sum().transpose();
    if (l == 0) break;
    Eigen::MatrixXd da = dz * m.layers[l].w;
    if (masks) da = da.cwiseProduct((*masks)[l - 1]);
    dz = da.cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
  }
  return g;
}

struct Prediction {
  double probability = 0.0;
  bool decision = false;
};

/// Probability for one raw feature vector (dropout off).
inline Prediction predict(const MlpModel& m, const std::vector<double>& features) {
  if (features.size() != m.input_size()) {
    throw InvalidArgument("feature length " + std::to_string(features.size()) +
                          " does not match model input " + std::to_string(m.input_size()));
  }
  const auto z = m.scaler.transform(features);
  const Eigen::MatrixXd x = Eigen::Map<const Eigen::RowVectorXd>(z.data(), Eigen::Index(z.size()));
  const double p = sigmoid(m.logits(x)(0));
  return {p, p >= m.threshold};
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainingReport {
  std::uint64_t seed = 0;
  FeatureVariant variant = FeatureVariant::Default;
  Hyperparams hyper;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool stopped_early = false;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  std::vector<std::size_t> constant_features;

  nlohmann::json to_json() const {
    nlohmann::json ep = nlohmann::json::array();
    for (const auto& e : epochs) {
      ep.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
                    {"val_accuracy", e.val_accuracy}});
    }
    return {{"seed", seed},
            {"variant", std::string(to_string(variant))},
            {"hyperparameters", hyper.to_json()},
            {"n_train", n_train},
            {"n_val", n_val},
            {"class_counts", {{"oversegmented", positives}, {"natural_gap", negatives}}},
            {"epochs", ep},
            {"best_epoch", best_epoch},
            {"stopped_early", stopped_early},
            {"train_accuracy", train_accuracy},
            {"val_accuracy", val_accuracy},
            {"constant_features", constant_features}};
  }
};

struct TrainResult {
  MlpModel model;
  TrainingReport report;
};

namespace detail {

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

struct AdamState {
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;
  long t = 0;

  explicit AdamState(const MlpModel& m) {
    for (const auto& l : m.layers) {
      mw.push_back(Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()));
      vw.push_back(mw.back());
      mb.push_back(Eigen::VectorXd::Zero(l.b.size()));
      vb.push_back(mb.back());
    }
  }

  void step(MlpModel& m, const Gradients& g, const Hyperparams& h) {
    ++t;
    const double c1 = 1.0 - std::pow(h.beta1, double(t));
    const double c2 = 1.0 - std::pow(h.beta2, double(t));
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      mw[l] = h.beta1 * mw[l] + (1.0 - h.beta1) * g.w[l];
      vw[l] = h.beta2 * vw[l] + (1.0 - h.beta2) * g.w[l].cwiseAbs2();
      mb[l] = h.beta1 * mb[l] + (1.0 - h.beta1) * g.b[l];
      vb[l] = h.beta2 * vb[l] + (1.0 - h.beta2) * g.b[l].cwiseAbs2();
      m.layers[l].w.array() -= h.learning_rate * (mw[l].array() / c1) /
                               ((vw[l].array() / c2).sqrt() + h.adam_eps);
      m.layers[l].b.array() -= h.learning_rate * (mb[l].array() / c1) /
                               ((vb[l].array() / c2).sqrt() + h.adam_eps);
    }
  }
};

struct Split {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd w;
};

inline Split gather(const std::vector<std::vector<double>>& rows, const std::vector<double>& labels,
                    const std::vector<double>& weights, const std::vector<std::size_t>& idx,
                    const FeatureScaler& scaler) {
  const auto d = Eigen::Index(rows.empty() ? 0 : rows.front().size());
  Split s{Eigen::MatrixXd(Eigen::Index(idx.size()), d), Eigen::VectorXd(Eigen::Index(idx.size())),
          Eigen::VectorXd(Eigen::Index(idx.size()))};
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto z = scaler.transform(rows[idx[r]]);
    for (Eigen::Index j = 0; j < d; ++j) s.x(Eigen::Index(r), j) = z[std::size_t(j)];
    s.y(Eigen::Index(r)) = labels[idx[r]];
    s.w(Eigen::Index(r)) = weights[idx[r]];
  }
  return s;
}

inline double mean_loss(const MlpModel& m, const Split& s) {
  const Eigen::VectorXd z = m.logits(s.x);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) loss += s.w(i) * bce_logit(z(i), s.y(i));
  return loss / s.w.sum();
}

inline double accuracy(const MlpModel& m, const Split& s) {
  if (s.y.size() == 0) return 0.0;
  const Eigen::VectorXd z = m.logits(s.x);
  int ok = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) ok += (sigmoid(z(i)) >= m.threshold) == (s.y(i) > 0.5);
  return double(ok) / double(z.size());
}

}  // namespace detail

/// Adam on weighted cross-entropy with early stopping on a held-out split.
/// Every random stream (split, init, shuffling, dropout) derives from `seed`.
inline TrainResult train(const TrainingSet& set, const Hyperparams& h, std::uint64_t seed) {
  const auto& ex = set.examples;
  if (ex.size() < 2) throw InvalidArgument("training needs at least two examples");
  const std::size_t d = ex.front().features.size();
  std::size_t pos = 0;
  for (const auto& e : ex) {
    if (e.features.size() != d) throw InvalidArgument("examples differ in feature length");
    if (e.label != 0 && e.label != 1) throw InvalidArgument("labels must be 0 or 1");
    for (double v : e.features)
      if (!std::isfinite(v)) throw InvalidArgument("non-finite feature value");
    pos += std::size_t(e.label);
  }
  if (pos == 0 || pos == ex.size()) throw InvalidArgument("training data contains a single class");
  if (set.shape_features && d != feature_length(set.variant)) {
    throw InvalidArgument("feature length does not match variant " + std::string(to_string(set.variant)));
  }

  Rng split_rng(detail::splitmix(seed ^ 1)), init_rng(detail::splitmix(seed ^ 2)),
      order_rng(detail::splitmix(seed ^ 3)), drop_rng(detail::splitmix(seed ^ 4));

  std::vector<std::size_t> order(ex.size());
  std::iota(order.begin(), order.end(), 0);
  split_rng.shuffle(order);
  std::size_t n_val = 0;
  if (ex.size() >= 10 && h.validation_fraction > 0.0) {
    n_val = std::max<std::size_t>(1, std::size_t(std::lround(h.validation_fraction * double(ex.size()))));
  }
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + long(n_val));
  std::vector<std::size_t> train_idx(order.begin() + long(n_val), order.end());

  std::vector<int> sizes{int(d)};
  sizes.insert(sizes.end(), h.hidden.begin(), h.hidden.end());
  sizes.push_back(1);
  MlpModel model = MlpModel::initialized(sizes, init_rng);
  model.dropout = h.dropout;
  model.threshold = h.threshold;
  model.variant = set.variant;
  model.shape_features = set.shape_features;
  model.seed = seed;

  std::vector<std::vector<double>> rows;
  std::vector<double> labels, weights;
  for (const auto& e : ex) {
    rows.push_back(e.features);
    labels.push_back(double(e.label));
  }
  if (set.shape_features) {
    std::vector<std::pair<ShapeClass, double>> samples;
    for (std::size_t i : train_idx) samples.emplace_back(ex[i].shape_class, ex[i].r2);
    model.normalizer = ShapeNormalizer::fit(samples);
    const std::size_t slot = 2 * stats_width(set.variant) + 1;
    for (std::size_t i = 0; i < ex.size(); ++i) rows[i][slot] = model.normalizer.apply(ex[i].shape_class, ex[i].r2);
  }
  std::size_t train_pos = 0;
  for (std::size_t i : train_idx) train_pos += std::size_t(ex[i].label);
  const double n_train = double(train_idx.size());
  for (const auto& e : ex) {
    double w = 1.0;
    if (h.balance_classes && train_pos > 0 && train_pos < train_idx.size()) {
      w = n_train / (2.0 * double(e.label ? train_pos : train_idx.size() - train_pos));
    }
    weights.push_back(w);
  }

  std::vector<const std::vector<double>*> train_rows;
  for (std::size_t i : train_idx) train_rows.push_back(&rows[i]);
  model.scaler = FeatureScaler::fit(train_rows);
  const auto tr = detail::gather(rows, labels, weights, train_idx, model.scaler);
  const auto va = detail::gather(rows, labels, weights, val_idx, model.scaler);

  TrainingReport rep;
  rep.seed = seed;
  rep.variant = set.variant;
  rep.hyper = h;
  rep.n_train = train_idx.size();
  rep.n_val = n_val;
  rep.positives = pos;
  rep.negatives = ex.size() - pos;
  rep.constant_features = model.scaler.constant;

  detail::AdamState adam(model);
  MlpModel best = model;
  double best_val = std::numeric_limits<double>::infinity();
  int wait = 0;
  const auto batch = std::size_t(h.full_batch ? tr.x.rows() : std::max(1, h.batch_size));
  std::vector<Eigen::Index> perm(std::size_t(tr.x.rows()));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  for (int epoch = 1; epoch <= h.max_epochs; ++epoch) {
    order_rng.shuffle(perm);
    for (std::size_t start = 0; start < perm.size(); start += batch) {
      const std::size_t end = std::min(perm.size(), start + batch);
      const auto nb = Eigen::Index(end - start);
      Eigen::MatrixXd xb(nb, tr.x.cols());
      Eigen::VectorXd yb(nb), wb(nb);
      for (Eigen::Index r = 0; r < nb; ++r) {
        xb.row(r) = tr.x.row(perm[start + std::size_t(r)]);
        yb(r) = tr.y(perm[start + std::size_t(r)]);
        wb(r) = tr.w(perm[start + std::size_t(r)]);
      }
      Gradients g;
      if (h.dropout > 0.0) {
        std::vector<Eigen::MatrixXd> masks;
        for (std::size_t l = 0; l + 1 < model.layers.size(); ++l) {
          Eigen::MatrixXd mk(nb, model.layers[l].w.rows());
          for (Eigen::Index i = 0; i < mk.rows(); ++i)
            for (Eigen::Index j = 0; j < mk.cols(); ++j)
              mk(i, j) = drop_rng.uniform() < h.dropout ? 0.0 : 1.0 / (1.0 - h.dropout);
          masks.push_back(std::move(mk));
        }
        g = loss_and_gradient(model, xb, yb, wb, &masks);
      } else {
        g = loss_and_gradient(model, xb, yb, wb);
      }
      if (!std::isfinite(g.loss)) throw Error("training loss became non-finite");
      adam.step(model, g, h);
    }
    EpochRecord rec{epoch, detail::mean_loss(model, tr), 0.0, 0.0};
    if (!std::isfinite(rec.train_loss)) throw Error("training loss became non-finite");
    if (n_val > 0) {
      rec.val_loss = detail::mean_loss(model, va);
      rec.val_accuracy = detail::accuracy(model, va);
    }
    rep.epochs.push_back(rec);
    if (n_val == 0) {
      best = model;
      rep.best_epoch = epoch;
      continue;
    }
    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      best = model;
      rep.best_epoch = epoch;
      wait = 0;
    } else if (++wait >= h.patience) {
      rep.stopped_early = true;
      break;
    }
  }
  rep.train_accuracy = detail::accuracy(best, tr);
  rep.val_accuracy = n_val > 0 ? detail::accuracy(best, va) : 0.0;
  return {std::move(best), std::move(rep)};
}

inline constexpr int kModelFormatVersion = 1;

inline std::vector<double> to_std(const Eigen::MatrixXd& m) {
  std::vector<double> v;
  v.reserve(std::size_t(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) v.push_back(m(i, j));
  return v;
}

inline nlohmann::json model_to_json(const MlpModel& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : m.layers) {
    layers.push_back({{"weights", b64::encode_doubles(to_std(l.w))},
                      {"bias", b64::encode_doubles(std::vector<double>(l.b.data(), l.b.data() + l.b.size()))}});
  }
  return {{"format", "ovseg-mlp"},
          {"version", kModelFormatVersion},
          {"layer_sizes", m.layer_sizes},
          {"activation", {{"hidden", "relu"}, {"output", "sigmoid"}}},
          {"dropout", m.dropout},
          {"threshold", m.threshold},
          {"variant", std::string(to_string(m.variant))},
          {"shape_features", m.shape_features},
          {"seed", m.seed},
          {"layers", layers},
          {"scaler",
           {{"mean", b64::encode_doubles(m.scaler.mean)},
            {"stddev", b64::encode_doubles(m.scaler.stddev)},
            {"constant", m.scaler.constant}}},
          {"shape_normalizer", m.normalizer.to_json()}};
}

inline MlpModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "ovseg-mlp") throw FormatError("not an ovseg model file");
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion) {
      throw VersionMismatch("model format version " + std::to_string(version) + ", expected " +
                            std::to_string(kModelFormatVersion));
    }
    MlpModel m = MlpModel::zeros(j.at("layer_sizes").get<std::vector<int>>());
    const auto& layers = j.at("layers");
    if (layers.size() != m.layers.size()) throw FormatError("layer count does not match layer_sizes");
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      const auto w = b64::decode_doubles(layers[l].at("weights").get<std::string>());
      const auto b = b64::decode_doubles(layers[l].at("bias").get<std::string>());
      auto& L = m.layers[l];
      if (w.size() != std::size_t(L.w.size()) || b.size() != std::size_t(L.b.size())) {
        throw FormatError("weight buffer shape mismatch in layer " + std::to_string(l));
      }
      for (Eigen::Index r = 0; r < L.w.rows(); ++r)
        for (Eigen::Index c = 0; c < L.w.cols(); ++c) L.w(r, c) = w[std::size_t(r * L.w.cols() + c)];
      for (Eigen::Index r = 0; r < L.b.size(); ++r) L.b(r) = b[std::size_t(r)];
    }
    m.dropout = j.at("dropout").get<double>();
    m.threshold = j.at("threshold").get<double>();
    m.variant = parse_variant(j.at("variant").get<std::string>());
    m.shape_features = j.at("shape_features").get<bool>();
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& s = j.at("scaler");
    m.scaler.mean = b64::decode_doubles(s.at("mean").get<std::string>());
    m.scaler.stddev = b64::decode_doubles(s.at("stddev").get<std::string>());
    m.scaler.constant = s.at("constant").get<std::vector<std::size_t>>();
    if (m.scaler.mean.size() != m.input_size() || m.scaler.stddev.size() != m.input_size()) {
      throw FormatError("scaler length does not match model input");
    }
    m.normalizer = ShapeNormalizer::from_json(j.at("shape_normalizer"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt model file: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("corrupt model file: ") + e.what());
  }
}

inline std::string model_to_string(const MlpModel& m) { return model_to_json(m).dump(2) + "\n"; }

inline void save_model(const MlpModel& m, const std::filesystem::path& path) {
  io::write_text(path, model_to_string(m));
}

inline MlpModel load_model(const std::filesystem::path& path) {
  const std::string text = io::read_text(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt model file " + path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace ovseg
