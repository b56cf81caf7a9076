#include "roadvol/traineval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <thread>

#include "roadvol/csvio.hpp"
#include "roadvol/errors.hpp"

namespace roadvol::train {

void TrainConfig::validate() const {
  if (huber_delta <= 0.0) throw ConfigError("train: huber_delta must be positive");
  if (batch_size < 1 || epochs < 1) throw ConfigError("train: batch_size and epochs must be >= 1");
  if (learning_rate <= 0.0) throw ConfigError("train: learning_rate must be positive");
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("train: val_fraction must be in [0,1)");
  if (patience < 0) throw ConfigError("train: patience must be >= 0");
  if (workers < 1) throw ConfigError("train: workers must be >= 1");
  if (seeds.empty()) throw ConfigError("train: seeds list is empty");
}

void TrainConfig::to_kv(KvConfig& kv, const std::string& prefix) const {
  kv.set(prefix + "huber_delta", huber_delta);
  kv.set(prefix + "batch_size", batch_size);
  kv.set(prefix + "epochs", epochs);
  kv.set(prefix + "learning_rate", learning_rate);
  kv.set(prefix + "adam_beta1", adam_beta1);
  kv.set(prefix + "adam_beta2", adam_beta2);
  kv.set(prefix + "adam_eps", adam_eps);
  kv.set(prefix + "val_fraction", val_fraction);
  kv.set(prefix + "patience", patience);
  kv.set(prefix + "workers", workers);
  std::string s;
  for (size_t i = 0; i < seeds.size(); ++i) s += (i ? "," : "") + std::to_string(seeds[i]);
  kv.set(prefix + "seeds", s);
}

TrainConfig TrainConfig::from_kv(const KvConfig& kv, const std::string& prefix) {
  TrainConfig c;
  c.huber_delta = kv.get_double(prefix + "huber_delta", c.huber_delta);
  c.batch_size = kv.get_int(prefix + "batch_size", c.batch_size);
  c.epochs = kv.get_int(prefix + "epochs", c.epochs);
  c.learning_rate = kv.get_double(prefix + "learning_rate", c.learning_rate);
  c.adam_beta1 = kv.get_double(prefix + "adam_beta1", c.adam_beta1);
  c.adam_beta2 = kv.get_double(prefix + "adam_beta2", c.adam_beta2);
  c.adam_eps = kv.get_double(prefix + "adam_eps", c.adam_eps);
  c.val_fraction = kv.get_double(prefix + "val_fraction", c.val_fraction);
  c.patience = kv.get_int(prefix + "patience", c.patience);
  c.workers = kv.get_int(prefix + "workers", c.workers);
  if (kv.has(prefix + "seeds")) {
    c.seeds.clear();
    std::string s = kv.require_str(prefix + "seeds");
    size_t pos = 0;
    while (pos < s.size()) {
      size_t comma = s.find(',', pos);
      if (comma == std::string::npos) comma = s.size();
      try {
        c.seeds.push_back(std::stoull(s.substr(pos, comma - pos)));
      } catch (const std::exception&) {
        throw ConfigError("train.seeds: bad entry '" + s.substr(pos, comma - pos) + "'");
      }
      pos = comma + 1;
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

double geh_stat(double estimated, double observed) {
  double s = estimated + observed;
  if (s <= 0.0) return 0.0;
  double d = estimated - observed;
  return std::sqrt(2.0 * d * d / s);
}

MetricsReport compute_metrics(std::span<const double> predicted, std::span<const double> observed) {
  if (predicted.empty() || predicted.size() != observed.size())
    throw DataError("compute_metrics: empty or mismatched prediction/observation sets");
  double se = 0.0, ape = 0.0, gsum = 0.0;
  std::int64_t n = static_cast<std::int64_t>(predicted.size()), n_mape = 0, n_gt5 = 0;
  for (size_t i = 0; i < predicted.size(); ++i) {
    double p = predicted[i], o = observed[i];
    double d = p - o;
    se += d * d;
    if (o > 0.0) {
      ape += std::abs(d) / o;
      ++n_mape;
    }
    double g = geh_stat(p, o);
    gsum += g;
    if (g > 5.0) ++n_gt5;
  }
  MetricsReport r;
  r.rmse = std::sqrt(se / static_cast<double>(n));
  r.mape = n_mape > 0 ? 100.0 * ape / static_cast<double>(n_mape) : 0.0;
  r.geh = gsum / static_cast<double>(n);
  r.pct_geh_gt5 = 100.0 * static_cast<double>(n_gt5) / static_cast<double>(n);
  return r;
}

Tensor huber_profile_loss(Tensor predicted, Tensor observed, double delta) {
  if (predicted.shape() != observed.shape())
    throw ShapeError("huber_profile_loss: profile lengths differ, " + diff::shape_str(predicted.shape()) +
                     " vs " + diff::shape_str(observed.shape()));
  return diff::mean_all(diff::huber(predicted, observed, delta));
}

std::pair<std::vector<int>, std::vector<int>> split_sensors(const std::vector<int>& labeled, double fraction,
                                                            std::uint64_t seed) {
  if (labeled.size() < 2) throw DataError("split_sensors: need at least 2 labeled nodes");
  std::vector<int> order = labeled;
  Rng rng = Rng::stream(seed, "sensor-split");
  for (size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[rng.randint(static_cast<std::uint64_t>(i + 1))]);
  auto n_val = static_cast<size_t>(std::llround(fraction * static_cast<double>(labeled.size())));
  n_val = std::min(n_val, order.size() - 1);
  std::vector<int> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<int> tr(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());
  return {tr, val};
}

std::vector<int> samples_of_sensors(const Dataset& ds, const std::vector<int>& sensors) {
  std::vector<int> idx;
  for (size_t i = 0; i < ds.samples.size(); ++i)
    if (std::binary_search(sensors.begin(), sensors.end(), ds.samples[i].node)) idx.push_back(static_cast<int>(i));
  return idx;
}

// ---------------------------------------------------------------------------

Adam::Adam(const ParamStore& store, double beta1, double beta2, double eps)
    : m_(static_cast<size_t>(store.total_size()), 0.0),
      v_(static_cast<size_t>(store.total_size()), 0.0),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {}

void Adam::step(ParamStore& store, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  size_t pos = 0;
  for (size_t id = 0; id < store.count(); ++id) {
    auto& e = store.entry(static_cast<int>(id));
    for (size_t i = 0; i < e.value.size(); ++i, ++pos) {
      double g = e.grad[i];
      m_[pos] = beta1_ * m_[pos] + (1.0 - beta1_) * g;
      v_[pos] = beta2_ * v_[pos] + (1.0 - beta2_) * g * g;
      double mhat = m_[pos] / bc1;
      double vhat = v_[pos] / bc2;
      e.value[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

// Forward + target-row Huber loss for one sample, in original units.
Tensor sample_loss(Tape& tape, const VolumeModel& model, const ParamStore& store, const synth::Sample& s,
                   const NormStats& norm, double delta, bool train_mode, Rng& drng) {
  Tensor pred = model.forward(tape, store, s.sg, norm, train_mode, drng);
  Tensor row = diff::select_row(pred, s.sg.target_local);
  Tensor denorm = diff::scale(row, norm.vol_scale);
  Tensor target = tape.constant({static_cast<int>(s.target.size())}, std::span<const double>(s.target));
  return huber_profile_loss(denorm, target, delta);
}

}  // namespace

std::vector<double> predict_profile(const VolumeModel& model, const ParamStore& store, const graph::Subgraph& sg,
                                    const NormStats& norm) {
  Tape tape;
  Rng unused;
  Tensor pred = model.forward(tape, store, sg, norm, false, unused);
  Tensor row = diff::select_row(pred, sg.target_local);
  auto v = row.value();
  std::vector<double> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = std::max(0.0, v[i] * norm.vol_scale);
  return out;
}

MetricsReport evaluate_samples(const VolumeModel& model, const ParamStore& store, const Dataset& ds,
                               const std::vector<int>& idx, const NormStats& norm) {
  std::vector<double> pred, obs;
  for (int i : idx) {
    const auto& s = ds.samples[static_cast<size_t>(i)];
    auto p = predict_profile(model, store, s.sg, norm);
    pred.insert(pred.end(), p.begin(), p.end());
    obs.insert(obs.end(), s.target.begin(), s.target.end());
  }
  return compute_metrics(pred, obs);
}

TrainResult train_model(const VolumeModel& model, ParamStore& store, const Dataset& ds,
                        const std::vector<int>& train_idx, const std::vector<int>& val_idx, const NormStats& norm,
                        const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (train_idx.empty()) throw DataError("train_model: empty training set");
  const double delta = cfg.huber_delta;
  Adam adam(store, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

  TrainResult res;
  std::vector<double> best_params = store.snapshot_values();
  double best_geh = std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<int> order = train_idx;
  const int n_workers = std::max(1, cfg.workers);
  std::vector<Tape> tapes(static_cast<size_t>(n_workers));
  std::vector<std::vector<double>> worker_grads(static_cast<size_t>(n_workers));
  std::vector<double> worker_loss(static_cast<size_t>(n_workers), 0.0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng = Rng::stream(seed, "shuffle", static_cast<std::uint64_t>(epoch));
    for (size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.randint(static_cast<std::uint64_t>(i + 1))]);

    double epoch_loss = 0.0;
    for (size_t b0 = 0; b0 < order.size(); b0 += static_cast<size_t>(cfg.batch_size)) {
      size_t b1 = std::min(order.size(), b0 + static_cast<size_t>(cfg.batch_size));
      const int bn = static_cast<int>(b1 - b0);
      store.zero_grad();

      auto run_shard = [&](int w) {
        Tape& tape = tapes[static_cast<size_t>(w)];
        auto& grads = worker_grads[static_cast<size_t>(w)];
        grads.assign(static_cast<size_t>(store.total_size()), 0.0);
        double local_loss = 0.0;
        for (size_t j = b0 + static_cast<size_t>(w); j < b1; j += static_cast<size_t>(n_workers)) {
          int sample_idx = order[j];
          const auto& s = ds.samples[static_cast<size_t>(sample_idx)];
          tape.reset();
          // dropout keyed by (seed, epoch, sample id): independent of worker
          // scheduling and batch composition
          Rng drng = Rng::stream(seed, "dropout", static_cast<std::uint64_t>(epoch),
                                 static_cast<std::uint64_t>(sample_idx));
          Tensor loss = sample_loss(tape, model, store, s, norm, delta, true, drng);
          double lv = loss.item();
          if (!std::isfinite(lv))
            throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                               ", sample " + std::to_string(sample_idx));
          local_loss += lv;
          tape.backward(diff::scale(loss, 1.0 / bn));
          store.accumulate_grads_flat(tape, grads);
        }
        worker_loss[static_cast<size_t>(w)] = local_loss;
      };

      if (n_workers == 1) {
        run_shard(0);
      } else {
        std::vector<std::exception_ptr> errors(static_cast<size_t>(n_workers));
        std::vector<std::thread> pool;
        for (int w = 0; w < n_workers; ++w)
          pool.emplace_back([&, w] {
            try {
              run_shard(w);
            } catch (...) {
              errors[static_cast<size_t>(w)] = std::current_exception();
            }
          });
        for (auto& t : pool) t.join();
        for (auto& e : errors)
          if (e) std::rethrow_exception(e);
      }
      for (int w = 0; w < n_workers; ++w) {
        store.add_flat_to_grads(worker_grads[static_cast<size_t>(w)]);
        epoch_loss += worker_loss[static_cast<size_t>(w)];
      }
      adam.step(store, cfg.learning_rate);
    }

    EpochStats st;
    st.epoch = epoch;
    st.train_loss = epoch_loss / static_cast<double>(order.size());
    if (!val_idx.empty()) {
      double vloss = 0.0;
      std::vector<double> pred, obs;
      for (int i : val_idx) {
        const auto& s = ds.samples[static_cast<size_t>(i)];
        Tape tape;
        Rng unused;
        Tensor l = sample_loss(tape, model, store, s, norm, delta, false, unused);
        vloss += l.item();
        auto p = predict_profile(model, store, s.sg, norm);
        pred.insert(pred.end(), p.begin(), p.end());
        obs.insert(obs.end(), s.target.begin(), s.target.end());
      }
      st.val_loss = vloss / static_cast<double>(val_idx.size());
      st.val_geh = compute_metrics(pred, obs).geh;
    }
    res.curve.push_back(st);

    if (!val_idx.empty()) {
      if (st.val_geh < best_geh) {
        best_geh = st.val_geh;
        best_params = store.snapshot_values();
        res.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best > cfg.patience) {
        break;
      }
    } else {
      res.best_epoch = epoch;
      best_params = store.snapshot_values();
    }
  }

  store.restore_values(best_params);
  res.best_val_geh = std::isfinite(best_geh) ? best_geh : 0.0;
  return res;
}

// ---------------------------------------------------------------------------

ClassMeanBaseline::ClassMeanBaseline(const Dataset& ds, const std::vector<int>& train_idx) {
  tprime_ = ds.Tprime;
  class_sum_.assign(5 * 7 * static_cast<size_t>(tprime_), 0.0);
  class_count_.assign(5 * 7, 0);
  global_sum_.assign(7 * static_cast<size_t>(tprime_), 0.0);
  global_count_.assign(7, 0);
  for (int i : train_idx) {
    const auto& s = ds.samples[static_cast<size_t>(i)];
    int fc = std::clamp(s.target_fc, 1, 5) - 1;
    int w = s.weekday;
    for (int h = 0; h < tprime_; ++h) {
      class_sum_[(static_cast<size_t>(fc) * 7 + w) * tprime_ + h] += s.target[static_cast<size_t>(h)];
      global_sum_[static_cast<size_t>(w) * tprime_ + h] += s.target[static_cast<size_t>(h)];
    }
    ++class_count_[static_cast<size_t>(fc) * 7 + w];
    ++global_count_[static_cast<size_t>(w)];
  }
}

std::vector<double> ClassMeanBaseline::predict(int functional_class, int weekday) const {
  int fc = std::clamp(functional_class, 1, 5) - 1;
  std::vector<double> out(static_cast<size_t>(tprime_), 0.0);
  int cc = class_count_[static_cast<size_t>(fc) * 7 + weekday];
  if (cc > 0) {
    for (int h = 0; h < tprime_; ++h)
      out[static_cast<size_t>(h)] =
          class_sum_[(static_cast<size_t>(fc) * 7 + weekday) * tprime_ + h] / static_cast<double>(cc);
  } else if (global_count_[static_cast<size_t>(weekday)] > 0) {
    for (int h = 0; h < tprime_; ++h)
      out[static_cast<size_t>(h)] = global_sum_[static_cast<size_t>(weekday) * tprime_ + h] /
                                    static_cast<double>(global_count_[static_cast<size_t>(weekday)]);
  }
  return out;
}

MetricsReport ClassMeanBaseline::evaluate(const Dataset& ds, const std::vector<int>& idx) const {
  std::vector<double> pred, obs;
  for (int i : idx) {
    const auto& s = ds.samples[static_cast<size_t>(i)];
    auto p = predict(s.target_fc, s.weekday);
    pred.insert(pred.end(), p.begin(), p.end());
    obs.insert(obs.end(), s.target.begin(), s.target.end());
  }
  return compute_metrics(pred, obs);
}

std::vector<std::vector<double>> infer_network(const VolumeModel& model, const ParamStore& store,
                                               const graph::DualGraph& dual, int day, const NormStats& norm) {
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<size_t>(dual.num_nodes()));
  for (int v = 0; v < dual.num_nodes(); ++v) {
    auto sg = graph::khop_subgraph(dual, v, model.config().K, day);
    out.push_back(predict_profile(model, store, sg, norm));
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_loss_curve_csv(const std::string& path, const std::vector<EpochStats>& curve) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << "epoch,train_loss,val_loss,val_geh\n";
  for (const auto& e : curve)
    out << e.epoch << ',' << io::format_double(e.train_loss) << ',' << io::format_double(e.val_loss) << ','
        << io::format_double(e.val_geh) << "\n";
}

void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << "model,seed,rmse,mape,geh,pct_geh_gt5\n";
  for (const auto& r : rows)
    out << r.model << ',' << r.seed << ',' << io::format_double(r.metrics.rmse) << ','
        << io::format_double(r.metrics.mape) << ',' << io::format_double(r.metrics.geh) << ','
        << io::format_double(r.metrics.pct_geh_gt5) << "\n";
}

MetricsReport mean_metrics(const std::vector<MetricsReport>& per_seed) {
  if (per_seed.empty()) throw DataError("mean_metrics: empty input");
  MetricsReport m;
  for (const auto& r : per_seed) {
    m.rmse += r.rmse;
    m.mape += r.mape;
    m.geh += r.geh;
    m.pct_geh_gt5 += r.pct_geh_gt5;
  }
  double n = static_cast<double>(per_seed.size());
  m.rmse /= n;
  m.mape /= n;
  m.geh /= n;
  m.pct_geh_gt5 /= n;
  return m;
}

void save_checkpoint(const std::string& prefix, const ParamStore& store, const ModelConfig& mcfg,
                     const NormStats& norm, const KvConfig* extra) {
  store.save(prefix + ".bin", prefix + ".manifest");
  KvConfig kv;
  mcfg.to_kv(kv);
  norm.to_kv(kv);
  if (extra) kv.merge_from(*extra);
  kv.save(prefix + ".config");
}

void load_checkpoint(const std::string& prefix, ParamStore& store, ModelConfig& mcfg, NormStats& norm) {
  KvConfig kv = KvConfig::load(prefix + ".config");
  mcfg = ModelConfig::from_kv(kv);
  norm = NormStats::from_kv(kv);
  store.load(prefix + ".bin", prefix + ".manifest");
}

SeedRunResult run_seed(const ModelConfig& mcfg, const TrainConfig& tcfg, const Dataset& ds, std::uint64_t seed,
                       ParamStore& store_out) {
  SeedRunResult out;
  std::vector<int> labeled;
  for (const auto& s : ds.samples)
    if (labeled.empty() || labeled.back() != s.node) labeled.push_back(s.node);
  std::sort(labeled.begin(), labeled.end());
  labeled.erase(std::unique(labeled.begin(), labeled.end()), labeled.end());

  auto [train_sensors, val_sensors] = split_sensors(labeled, tcfg.val_fraction, seed);
  out.train_sensors = train_sensors;
  out.val_sensors = val_sensors;
  auto train_idx = samples_of_sensors(ds, train_sensors);
  auto val_idx = samples_of_sensors(ds, val_sensors);
  out.norm = synth::fit_norm_stats(ds, train_idx);

  out.model = std::make_unique<VolumeModel>(mcfg, store_out, seed);
  out.train = train_model(*out.model, store_out, ds, train_idx, val_idx, out.norm, tcfg, seed);
  out.val_metrics = val_idx.empty() ? MetricsReport{} : evaluate_samples(*out.model, store_out, ds, val_idx, out.norm);
  return out;
}

std::vector<AblationRow> run_ablations(const Dataset& avg_ds, const Dataset& raw_ds, const ModelConfig& base,
                                       const TrainConfig& tcfg) {
  const char* variants[] = {"full", "no_speed_branch", "no_static_branch", "no_neighborhood", "single_branch",
                            "undirected"};
  std::vector<AblationRow> rows;
  for (const char* name : variants) {
    ModelConfig cfg = base;
    cfg.ablation = model::AblationFlags::from_name(name);
    std::vector<MetricsReport> per_seed;
    for (std::uint64_t seed : tcfg.seeds) {
      ParamStore store;
      per_seed.push_back(run_seed(cfg, tcfg, avg_ds, seed, store).val_metrics);
    }
    rows.push_back({name, mean_metrics(per_seed)});
  }
  {
    // full model evaluated on raw daily volumes
    std::vector<MetricsReport> per_seed;
    for (std::uint64_t seed : tcfg.seeds) {
      ParamStore store;
      per_seed.push_back(run_seed(base, tcfg, raw_ds, seed, store).val_metrics);
    }
    rows.push_back({"full_raw", mean_metrics(per_seed)});
  }
  return rows;
}

}  // namespace roadvol::train
