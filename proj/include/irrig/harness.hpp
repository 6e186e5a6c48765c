#pragma once

// Training orchestration and evaluation: balancing weights, the augmented network loop
// with min-validation-F1 checkpointing, tree-model training, metrics, withheld-region
// sweeps, prediction alignment and the polygon-fraction ablation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "irrig/classifiers/dataset.hpp"
#include "irrig/classifiers/model.hpp"
#include "irrig/core/log.hpp"
#include "irrig/core/parallel.hpp"
#include "irrig/core/random.hpp"
#include "irrig/labels.hpp"

namespace irrig {

// ---------------------------------------------------------------------------
// Region datasets

enum class RegionRole { trainable, holdout_only };

struct RegionDataset {
  std::string name;
  RegionRole role = RegionRole::trainable;
  Dataset train, val, test;

  const Dataset& split(Split s) const { return s == Split::train ? train : s == Split::val ? val : test; }
};

/// One RegionDataset per region of the table (sorted by name), restricted to the layers
/// of `mode`. Regions listed in `holdout_only` never supply rows to any fit.
inline std::vector<RegionDataset> make_region_datasets(const SampleTable& table, InputMode mode,
                                                       const std::set<std::string>& holdout_only = {}) {
  std::vector<RegionDataset> out;
  for (const auto& region : table.regions()) {
    RegionDataset r;
    r.name = region;
    r.role = holdout_only.count(region) ? RegionRole::holdout_only : RegionRole::trainable;
    auto pick = [&](Split s) {
      return make_dataset(table, mode, [&](const PixelSample& p) { return p.region == region && p.split == s; });
    };
    r.train = pick(Split::train);
    r.val = pick(Split::val);
    r.test = pick(Split::test);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Weights

/// Class weight n_r / (2 n_rc) times region weight max_r n_r / n_r, per sample.
inline std::vector<std::vector<double>> compute_weights(const std::vector<std::vector<int>>& labels_by_region) {
  if (labels_by_region.empty()) throw NumericError("compute_weights: no regions");
  std::size_t largest = 0;
  for (const auto& l : labels_by_region) largest = std::max(largest, l.size());
  std::vector<std::vector<double>> out;
  for (std::size_t r = 0; r < labels_by_region.size(); ++r) {
    const auto& labels = labels_by_region[r];
    if (labels.empty()) throw NumericError("compute_weights: region " + std::to_string(r) + " has no samples");
    const double n = static_cast<double>(labels.size());
    const double n1 = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    const double n0 = n - n1;
    if (n0 == 0 || n1 == 0)
      log::warn("compute_weights: region " + std::to_string(r) + " holds a single class; only it is weighted");
    const double region_w = static_cast<double>(largest) / n;
    std::vector<double> w(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) w[i] = region_w * n / (2.0 * (labels[i] == 1 ? n1 : n0));
    out.push_back(std::move(w));
  }
  return out;
}

inline void assign_weights(const std::vector<Dataset*>& sets) {
  std::vector<std::vector<int>> labels;
  for (const auto* d : sets) labels.push_back(d->labels);
  const auto w = compute_weights(labels);
  for (std::size_t r = 0; r < sets.size(); ++r) sets[r]->weights = w[r];
}

// ---------------------------------------------------------------------------
// Metrics

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const { return tp + fp + fn + tn; }
};

inline ConfusionCounts confusion(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("confusion: length mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == 1) (predicted[i] == 1 ? c.tp : c.fn)++;
    else (predicted[i] == 1 ? c.fp : c.tn)++;
  }
  return c;
}

struct F1Score {
  double value = 0.0;
  bool undefined = false;  // TP = FP = FN = 0
};

/// TP / (TP + (FP + FN) / 2).
inline F1Score f1_score(const ConfusionCounts& c) {
  if (c.tp == 0 && c.fp == 0 && c.fn == 0) return {1.0, true};
  const double tp = static_cast<double>(c.tp);
  return {tp / (tp + 0.5 * static_cast<double>(c.fp + c.fn)), false};
}

struct MetricsReport {
  std::string region;
  ConfusionCounts counts;
  F1Score f1;
  std::optional<double> accuracy_irrigated;      // correct irrigated / total irrigated
  std::optional<double> accuracy_non_irrigated;  // correct non-irrigated / total non-irrigated
};

inline MetricsReport metrics_from(std::string region, std::span<const int> predicted, std::span<const int> truth) {
  MetricsReport m;
  m.region = std::move(region);
  m.counts = confusion(predicted, truth);
  m.f1 = f1_score(m.counts);
  if (m.counts.tp + m.counts.fn > 0)
    m.accuracy_irrigated = static_cast<double>(m.counts.tp) / static_cast<double>(m.counts.tp + m.counts.fn);
  if (m.counts.tn + m.counts.fp > 0)
    m.accuracy_non_irrigated = static_cast<double>(m.counts.tn) / static_cast<double>(m.counts.tn + m.counts.fp);
  return m;
}

inline nlohmann::json to_json(const MetricsReport& m) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"region", m.region},
          {"tp", m.counts.tp},
          {"fp", m.counts.fp},
          {"fn", m.counts.fn},
          {"tn", m.counts.tn},
          {"f1", m.f1.value},
          {"f1_undefined", m.f1.undefined},
          {"accuracy_irrigated", opt(m.accuracy_irrigated)},
          {"accuracy_non_irrigated", opt(m.accuracy_non_irrigated)}};
}

/// Unshifted evaluation of every region's chosen split.
inline std::vector<MetricsReport> evaluate(const TrainedModel& model, std::span<const RegionDataset> regions,
                                           Split split = Split::test) {
  std::vector<MetricsReport> out;
  for (const auto& r : regions) {
    const Dataset& d = r.split(split);
    if (d.size() == 0) throw NumericError("evaluate: region '" + r.name + "' has an empty split");
    out.push_back(metrics_from(r.name, predict_class(model, d), d.labels));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainingConfig {
  ModelVariant variant = ModelVariant::transformer;
  InputMode mode = InputMode::evi;
  int batch_size = 256;
  int max_epochs = 30;
  int patience = 10;
  double learning_rate = 1e-4;
  TransformerConfig network;  // inputs and timesteps are taken from the data
  ForestParams forest;
  GbdtParams gbdt;
  double gbdt_valid_fraction = 0.10;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::vector<double> val_f1;  // per included region
  double min_val_f1 = 0.0;
  double best_min_val_f1 = 0.0;
  bool checkpoint = false;
};

struct NetworkTraining {
  TrainedModel model;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  bool never_improved = false;  // only the first epoch was ever checkpointed
};

inline nlohmann::json to_json(const EpochRecord& e) {
  return {{"epoch", e.epoch},           {"train_loss", e.train_loss}, {"val_f1", e.val_f1},
          {"min_val_f1", e.min_val_f1}, {"best_min_val_f1", e.best_min_val_f1}, {"checkpoint", e.checkpoint}};
}

namespace detail {

inline std::vector<const RegionDataset*> trainable_only(std::span<const RegionDataset* const> regions) {
  std::vector<const RegionDataset*> out;
  for (const auto* r : regions)
    if (r->role == RegionRole::trainable) out.push_back(r);
  if (out.empty()) throw NumericError("training needs at least one trainable region");
  return out;
}

inline void shift_sample(std::span<double> x, int layers, int timesteps, int shift) {
  for (int l = 0; l < layers; ++l) {
    const auto shifted = random_shift(std::span<const double>(x.data() + l * timesteps, timesteps), shift);
    std::copy(shifted.begin(), shifted.end(), x.begin() + l * timesteps);
  }
}

inline std::vector<int> net_classes(const TransformerNet& net, const std::vector<double>& x, std::size_t width) {
  const std::size_t N = x.size() / width;
  std::vector<int> out(N);
  const std::size_t chunks = (N + 63) / 64;
  parallel_for(chunks, [&](std::size_t c) {
    TransformerWorkspace ws;
    ws.resize(net.config());
    for (std::size_t i = c * 64; i < std::min(N, c * 64 + 64); ++i)
      out[i] = net.predict(std::span<const double>(x.data() + i * width, width), ws) >= 0.5 ? 1 : 0;
  });
  return out;
}

}  // namespace detail

/// Per step one batch from each region (smaller regions cycle with a reshuffle), one
/// Adam update on the concatenation; per epoch the minimum validation F1 over regions
/// decides checkpoints (strict improvement). Stops after `patience` epochs without
/// improvement or `max_epochs`, restoring the best checkpoint.
inline NetworkTraining train_network_loop(std::span<const RegionDataset* const> included, const TrainingConfig& cfg) {
  const auto regions = detail::trainable_only(included);
  const std::size_t R = regions.size();
  std::vector<Dataset> train(R), val(R);
  for (std::size_t r = 0; r < R; ++r) {
    train[r] = regions[r]->train;
    val[r] = regions[r]->val;
    if (train[r].size() == 0) throw NumericError("train_network_loop: region '" + regions[r]->name + "' has no training rows");
  }
  std::vector<Dataset*> tp;
  for (auto& d : train) tp.push_back(&d);
  assign_weights(tp);
  Dataset pooled;
  for (const auto& d : train) pooled.append(d);
  if (!pooled.has_both_classes()) throw NumericError("train_network_loop: training data holds a single class");

  const int L = pooled.layers, T = pooled.timesteps;
  const std::size_t width = pooled.width();
  TrainedModel model;
  model.variant = ModelVariant::transformer;
  model.input_mode = cfg.mode;
  model.layers = L;
  model.timesteps = T;
  model.standardizer = fit_standardizer(pooled);
  for (auto& d : train) d.features = standardized_features(d, model.standardizer);
  for (auto& d : val) d.features = standardized_features(d, model.standardizer);

  TransformerConfig nc = cfg.network;
  nc.inputs = L;
  nc.timesteps = T;
  TransformerNet net(nc);
  net.initialize(derive_seed(cfg.seed, 0x4E4E));
  AdamOptimizer adam;
  adam.learning_rate = cfg.learning_rate;
  const bool shifted = cfg.mode == InputMode::evi_shifted;

  Rng rng = make_stream(cfg.seed, 0x7121);
  std::vector<std::vector<std::size_t>> order(R);
  std::vector<std::size_t> cursor(R, 0);
  for (std::size_t r = 0; r < R; ++r) {
    order[r].resize(train[r].size());
    std::iota(order[r].begin(), order[r].end(), 0);
    shuffle(order[r], rng);
  }
  const std::size_t B = static_cast<std::size_t>(std::max(1, cfg.batch_size));
  std::size_t steps = 0;
  for (const auto& d : train) steps = std::max(steps, (d.size() + B - 1) / B);

  NetworkTraining out;
  std::vector<double> best_params = net.params();
  double best = -std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<double> feats, weights, grad;
  std::vector<int> labels;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<std::pair<std::size_t, std::size_t>> batch;  // (region, row)
      for (std::size_t r = 0; r < R; ++r) {
        const std::size_t take = std::min(B, train[r].size());
        for (std::size_t k = 0; k < take; ++k) {
          if (cursor[r] == order[r].size()) {
            shuffle(order[r], rng);
            cursor[r] = 0;
          }
          batch.emplace_back(r, order[r][cursor[r]++]);
        }
      }
      shuffle(batch, rng);
      feats.resize(batch.size() * width);
      weights.resize(batch.size());
      labels.resize(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& d = train[batch[i].first];
        const auto x = d.sample(batch[i].second);
        std::span<double> dst(feats.data() + i * width, width);
        std::copy(x.begin(), x.end(), dst.begin());
        if (shifted) detail::shift_sample(dst, L, T, draw_shift(rng));
        weights[i] = d.weights[batch[i].second];
        labels[i] = d.labels[batch[i].second];
      }
      const double loss = loss_and_gradient(net, {feats, labels, weights}, &grad);
      if (!std::isfinite(loss))
        throw NumericError("train_network_loop: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(s));
      loss_sum += loss;
      adam.update(net.params(), grad);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(steps, 1));
    Rng vrng = make_stream(cfg.seed, 0x5A11000 + static_cast<std::uint64_t>(epoch));
    rec.min_val_f1 = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < R; ++r) {
      std::vector<double> x = val[r].features;
      if (shifted)
        for (std::size_t i = 0; i < val[r].size(); ++i)
          detail::shift_sample({x.data() + i * width, width}, L, T, draw_shift(vrng));
      double f1 = 1.0;
      if (val[r].size() > 0) f1 = f1_score(confusion(detail::net_classes(net, x, width), val[r].labels)).value;
      rec.val_f1.push_back(f1);
      rec.min_val_f1 = std::min(rec.min_val_f1, f1);
    }
    if (rec.min_val_f1 > best) {
      best = rec.min_val_f1;
      best_params = net.params();
      out.best_epoch = epoch;
      rec.checkpoint = true;
      since_best = 0;
    } else {
      ++since_best;
    }
    rec.best_min_val_f1 = best;
    out.history.push_back(rec);
    if (since_best >= cfg.patience) break;
  }
  out.never_improved = out.best_epoch <= 1;
  net.params() = best_params;
  model.params = std::move(net);
  model.metadata = {{"epochs", out.history.size()},
                    {"best_epoch", out.best_epoch},
                    {"best_min_val_f1", best},
                    {"never_improved", out.never_improved},
                    {"learning_rate", cfg.learning_rate},
                    {"batch_size", cfg.batch_size}};
  out.model = std::move(model);
  return out;
}

/// Random forest or gbdt on the merged train + val rows of every included region, with
/// weights recomputed on the merge. Gbdt stops early on a seeded 10% carve of the merge.
/// In shifted mode every merged row is shifted once by its own random draw.
inline TrainedModel train_tree_models(std::span<const RegionDataset* const> included, const TrainingConfig& cfg) {
  if (cfg.variant != ModelVariant::random_forest && cfg.variant != ModelVariant::gbdt)
    throw NumericError("train_tree_models: variant must be random_forest or gbdt");
  const auto regions = detail::trainable_only(included);
  std::vector<Dataset> merged(regions.size());
  for (std::size_t r = 0; r < regions.size(); ++r) {
    merged[r] = regions[r]->train;
    merged[r].append(regions[r]->val);
    if (merged[r].size() == 0) throw NumericError("train_tree_models: region '" + regions[r]->name + "' is empty");
  }
  std::vector<Dataset*> mp;
  for (auto& d : merged) mp.push_back(&d);
  assign_weights(mp);
  Dataset all;
  for (const auto& d : merged) all.append(d);

  TrainedModel model;
  model.variant = cfg.variant;
  model.input_mode = cfg.mode;
  model.layers = all.layers;
  model.timesteps = all.timesteps;
  model.standardizer = fit_standardizer(all);
  all.features = standardized_features(all, model.standardizer);
  if (cfg.mode == InputMode::evi_shifted) {
    // trees see every row once, so each row carries one independent shift
    Rng srng = make_stream(cfg.seed, 0x5F17);
    for (std::size_t i = 0; i < all.size(); ++i) detail::shift_sample(all.sample(i), all.layers, all.timesteps, draw_shift(srng));
  }
  if (cfg.variant == ModelVariant::random_forest) {
    ForestParams p = cfg.forest;
    p.seed = derive_seed(cfg.seed, 0xF0);
    model.params = fit_random_forest(all, p);
    model.metadata = {{"training_rows", all.size()}, {"trees", p.trees}};
    return model;
  }
  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_stream(cfg.seed, 0x6BD7);
  shuffle(idx, rng);
  const auto n_valid = static_cast<std::size_t>(std::ceil(cfg.gbdt_valid_fraction * static_cast<double>(all.size())));
  std::vector<std::size_t> vi(idx.begin(), idx.begin() + std::min(n_valid, idx.size()));
  std::vector<std::size_t> ti(idx.begin() + std::min(n_valid, idx.size()), idx.end());
  std::sort(vi.begin(), vi.end());
  std::sort(ti.begin(), ti.end());
  const Dataset tr = all.subset(ti), va = all.subset(vi);
  Gbdt g = fit_gbdt(tr, cfg.gbdt, va.size() > 0 ? &va : nullptr);
  model.metadata = {{"training_rows", tr.size()}, {"early_stop_rows", va.size()}, {"rounds", g.best_round}};
  model.params = std::move(g);
  return model;
}

/// Dispatches on the configured variant.
inline TrainedModel train_model(std::span<const RegionDataset* const> included, const TrainingConfig& cfg) {
  switch (cfg.variant) {
    case ModelVariant::reference: {
      const auto regions = detail::trainable_only(included);
      return make_reference_model(regions.front()->train.timesteps);
    }
    case ModelVariant::random_forest:
    case ModelVariant::gbdt: return train_tree_models(included, cfg);
    case ModelVariant::transformer: return train_network_loop(included, cfg).model;
  }
  throw NumericError("train_model: unknown variant");
}

// ---------------------------------------------------------------------------
// Withheld-region sweep

struct SweepRow {
  int size = 0;
  std::size_t subset = 0;  // index of the trained subset within its size
  std::vector<std::string> trained;
  std::string withheld;
  MetricsReport metrics;
};

struct SweepAggregate {
  int size = 0;
  std::size_t models = 0;
  std::size_t n = 0;
  double mean_f1 = 0.0;
  double p10_f1 = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<SweepAggregate> aggregates;
};

using Trainer = std::function<TrainedModel(std::span<const RegionDataset* const>, std::uint64_t seed)>;

inline Trainer make_trainer(const TrainingConfig& cfg) {
  return [cfg](std::span<const RegionDataset* const> regions, std::uint64_t seed) {
    TrainingConfig c = cfg;
    c.seed = seed;
    return train_model(regions, c);
  };
}

/// Every x-subset of the lexicographically ordered combinations of `count` items.
inline std::vector<std::vector<std::size_t>> combinations(std::size_t count, std::size_t x) {
  std::vector<std::vector<std::size_t>> out;
  if (x > count) return out;
  std::vector<std::size_t> c(x);
  std::iota(c.begin(), c.end(), 0);
  while (true) {
    out.push_back(c);
    std::size_t i = x;
    while (i > 0 && c[i - 1] == count - x + i - 1) --i;
    if (i == 0) break;
    ++c[i - 1];
    for (std::size_t j = i; j < x; ++j) c[j] = c[j - 1] + 1;
  }
  return out;
}

/// Trains one model per x-subset of the trainable regions and evaluates it on the test
/// split of every withheld trainable region. Subset trainings run in parallel, each from
/// its own derived seed.
inline SweepResult region_sweep(std::span<const RegionDataset> regions, const std::vector<int>& sizes,
                                const Trainer& trainer, std::uint64_t seed) {
  std::vector<const RegionDataset*> trainable;
  for (const auto& r : regions)
    if (r.role == RegionRole::trainable) trainable.push_back(&r);
  const std::size_t R = trainable.size();
  SweepResult out;
  std::uint64_t subset_counter = 0;
  for (int x : sizes) {
    if (x < 1 || static_cast<std::size_t>(x) >= R)
      throw NumericError("region_sweep: subset size " + std::to_string(x) + " outside 1.." + std::to_string(R - 1));
    const auto combos = combinations(R, static_cast<std::size_t>(x));
    std::vector<std::vector<SweepRow>> rows(combos.size());
    const std::uint64_t base = subset_counter;
    parallel_for(combos.size(), [&](std::size_t k) {
      std::vector<const RegionDataset*> included;
      std::vector<std::string> names;
      for (auto i : combos[k]) {
        included.push_back(trainable[i]);
        names.push_back(trainable[i]->name);
      }
      const TrainedModel model = trainer(included, derive_seed(seed, base + k));
      for (std::size_t i = 0; i < R; ++i) {
        if (std::find(combos[k].begin(), combos[k].end(), i) != combos[k].end()) continue;
        const Dataset& test = trainable[i]->test;
        if (test.size() == 0) throw NumericError("region_sweep: region '" + trainable[i]->name + "' has no test rows");
        SweepRow row;
        row.size = x;
        row.subset = k;
        row.trained = names;
        row.withheld = trainable[i]->name;
        row.metrics = metrics_from(row.withheld, predict_class(model, test), test.labels);
        rows[k].push_back(std::move(row));
      }
    });
    subset_counter += combos.size();
    SweepAggregate agg;
    agg.size = x;
    agg.models = combos.size();
    std::vector<double> f1;
    for (auto& rs : rows)
      for (auto& r : rs) {
        f1.push_back(r.metrics.f1.value);
        out.rows.push_back(std::move(r));
      }
    agg.n = f1.size();
    if (!f1.empty()) {
      double s = 0.0;
      for (double v : f1) s += v;
      agg.mean_f1 = s / static_cast<double>(f1.size());
      agg.p10_f1 = percentile(f1, 10.0);
    }
    out.aggregates.push_back(agg);
  }
  return out;
}

inline SweepResult region_sweep(std::span<const RegionDataset> regions, const std::vector<int>& sizes,
                                const TrainingConfig& cfg) {
  return region_sweep(regions, sizes, make_trainer(cfg), cfg.seed);
}

inline std::string sweep_csv(const SweepResult& s) {
  std::string out = "size,subset,trained,withheld,f1,f1_undefined,tp,fp,fn,tn,accuracy_irrigated,accuracy_non_irrigated\n";
  auto num = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string(); };
  for (const auto& r : s.rows) {
    std::string trained;
    for (std::size_t i = 0; i < r.trained.size(); ++i) trained += (i ? "|" : "") + r.trained[i];
    const auto& m = r.metrics;
    char f1[32];
    std::snprintf(f1, sizeof f1, "%.9g", m.f1.value);
    out += std::to_string(r.size) + "," + std::to_string(r.subset) + "," + trained + "," + r.withheld + "," + f1 +
           "," + (m.f1.undefined ? "1" : "0") + "," + std::to_string(m.counts.tp) + "," + std::to_string(m.counts.fp) +
           "," + std::to_string(m.counts.fn) + "," + std::to_string(m.counts.tn) + "," + num(m.accuracy_irrigated) +
           "," + num(m.accuracy_non_irrigated) + "\n";
  }
  return out;
}

inline nlohmann::json to_json(const SweepAggregate& a) {
  return {{"size", a.size}, {"models", a.models}, {"n", a.n}, {"mean_f1", a.mean_f1}, {"p10_f1", a.p10_f1}};
}

// ---------------------------------------------------------------------------
// Prediction alignment

struct AlignmentRow {
  std::string region;
  std::size_t samples = 0;
  double alignment = 1.0;
  std::size_t a0_b1 = 0;
  std::size_t a1_b0 = 0;
};

struct AlignmentReport {
  std::vector<AlignmentRow> rows;
  double mean_alignment = 1.0;
};

inline AlignmentReport prediction_alignment(const TrainedModel& a, const TrainedModel& b,
                                            std::span<const RegionDataset> regions, Split split = Split::test) {
  if (a.input_mode != b.input_mode && !(a.layers == b.layers && a.timesteps == b.timesteps))
    throw ShapeError("prediction_alignment: models consume different inputs");
  AlignmentReport rep;
  double sum = 0.0;
  for (const auto& r : regions) {
    const Dataset& d = r.split(split);
    const auto pa = predict_class(a, d), pb = predict_class(b, d);
    AlignmentRow row;
    row.region = r.name;
    row.samples = d.size();
    std::size_t same = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (pa[i] == pb[i]) ++same;
      else if (pa[i] == 0) ++row.a0_b1;
      else ++row.a1_b0;
    }
    row.alignment = d.size() ? static_cast<double>(same) / static_cast<double>(d.size()) : 1.0;
    sum += row.alignment;
    rep.rows.push_back(row);
  }
  if (!rep.rows.empty()) rep.mean_alignment = sum / static_cast<double>(rep.rows.size());
  return rep;
}

// ---------------------------------------------------------------------------
// Polygon-fraction ablation

struct AblationEntry {
  double fraction = 0.0;
  SweepResult sweep;
};

/// Training share `fraction` with the remainder halved between validation and test
/// (0.70 gives the default 70/15/15). Region-class groups left without training or
/// test polygons are skipped with a warning.
inline SplitRatios fraction_ratios(double fraction) {
  if (!(fraction > 0 && fraction < 1)) throw NumericError("ablation: fraction must lie in (0, 1)");
  return {fraction, (1.0 - fraction) / 2.0, (1.0 - fraction) / 2.0};
}

inline SampleTable resplit_for_fraction(const SampleTable& table, double fraction, std::uint64_t seed) {
  const auto ratios = fraction_ratios(fraction);
  const auto polys = table_polygons(table);
  std::map<std::pair<std::string, int>, std::size_t> group_size;
  for (const auto& [id, region, cls] : polys) ++group_size[{region, static_cast<int>(cls)}];
  std::set<std::pair<std::string, int>> skipped;
  for (const auto& [key, n] : group_size) {
    const auto counts = apportion(n, ratios);
    if (n < 3 || counts[0] == 0 || counts[2] == 0) {
      log::warn("ablation: fraction " + std::to_string(fraction) + " leaves region '" + key.first + "' class " +
                std::to_string(key.second) + " without training or test polygons; group skipped");
      skipped.insert(key);
    }
  }
  const auto assignment = split_polygons(polys, ratios, seed);
  SampleTable out;
  out.layer_names = table.layer_names;
  out.timesteps = table.timesteps;
  for (const auto& r : table.rows) {
    if (skipped.count({r.region, static_cast<int>(r.cls)})) continue;
    PixelSample s = r;
    s.split = assignment.at(r.polygon_id);
    out.rows.push_back(std::move(s));
  }
  return out;
}

inline std::vector<AblationEntry> ablation_fraction(const SampleTable& table, const std::vector<double>& fractions,
                                                    const std::vector<int>& sizes, const TrainingConfig& cfg,
                                                    const std::set<std::string>& holdout_only = {}) {
  std::vector<AblationEntry> out;
  for (std::size_t f = 0; f < fractions.size(); ++f) {
    const auto split = resplit_for_fraction(table, fractions[f], derive_seed(cfg.seed, 0xAB00 + f));
    const auto regions = make_region_datasets(split, cfg.mode, holdout_only);
    TrainingConfig c = cfg;
    c.seed = derive_seed(cfg.seed, 0xAC00 + f);
    out.push_back({fractions[f], region_sweep(regions, sizes, c)});
  }
  return out;
}

}  // namespace irrig
