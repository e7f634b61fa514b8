#include "damnet/train.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "damnet/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace damnet {

void apply_preset_paper(RunConfig& cfg) {
  cfg.epochs = 200;
  cfg.batch_size = 16;
  cfg.optim.kind = OptimKind::adam;
  cfg.optim.lr = 1e-6;
  cfg.optim.momentum = 0.9;
  cfg.optim.beta2 = 0.999;
  cfg.optim.weight_decay = 1e-6;
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["model"] = json::parse(model_config_to_json(cfg.model));
  j["optim"] = {{"kind", cfg.optim.kind == OptimKind::adam ? "adam" : "sgd_momentum"},
                {"lr", cfg.optim.lr},
                {"momentum", cfg.optim.momentum},
                {"beta2", cfg.optim.beta2},
                {"weight_decay", cfg.optim.weight_decay},
                {"eps", cfg.optim.eps}};
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["train_manifest"] = cfg.train_manifest;
  j["out_dir"] = cfg.out_dir;
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  RunConfig cfg;
  if (j.contains("model")) cfg.model = model_config_from_json(j["model"].dump());
  if (j.contains("optim")) {
    const json& o = j["optim"];
    if (o.contains("kind"))
      cfg.optim.kind = o["kind"].get<std::string>() == "adam" ? OptimKind::adam : OptimKind::sgd_momentum;
    cfg.optim.lr = o.value("lr", cfg.optim.lr);
    cfg.optim.momentum = o.value("momentum", cfg.optim.momentum);
    cfg.optim.beta2 = o.value("beta2", cfg.optim.beta2);
    cfg.optim.weight_decay = o.value("weight_decay", cfg.optim.weight_decay);
    cfg.optim.eps = o.value("eps", cfg.optim.eps);
  }
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.train_manifest = j.value("train_manifest", cfg.train_manifest);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  return cfg;
}

// One training process per output directory.
class DirLock {
 public:
  explicit DirLock(const std::string& dir) : path_(fs::path(dir) / ".lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (fs::exists(path_))
      throw std::runtime_error("training lock held: another run owns '" + dir + "' (stale? remove " + path_.string() + ")");
    std::ofstream f(path_);
    if (!f) throw std::runtime_error("cannot create lockfile '" + path_.string() + "'");
    f << "locked\n";
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

Tensor load_batch(const Manifest& manifest, const std::vector<size_t>& indices, const std::string& manifest_path,
                  std::vector<int>* labels) {
  if (indices.empty()) throw std::invalid_argument("load_batch: empty index list");
  Tensor first = normalize_volume(read_volume(resolve_volume_path(manifest_path, manifest[indices[0]])));
  const int64_t D = first.dims[0], H = first.dims[1], W = first.dims[2];
  Tensor batch({static_cast<int64_t>(indices.size()), 1, D, H, W});
  if (labels) labels->clear();
  for (size_t b = 0; b < indices.size(); ++b) {
    const VolumeRecord& rec = manifest[indices[b]];
    Tensor vol = b == 0 ? std::move(first) : normalize_volume(read_volume(resolve_volume_path(manifest_path, rec)));
    if (vol.dims[0] != D || vol.dims[1] != H || vol.dims[2] != W)
      throw std::runtime_error("load_batch: volume '" + rec.path + "' has shape " + shape_str(vol.dims) +
                               ", expected " + shape_str({D, H, W}));
    std::copy(vol.data.begin(), vol.data.end(), batch.data.begin() + static_cast<int64_t>(b) * D * H * W);
    if (labels) labels->push_back(rec.label);
  }
  return batch;
}

static void validate_manifest_for_training(const Manifest& m) {
  if (m.empty()) throw std::runtime_error("training manifest is empty");
  for (const VolumeRecord& r : m)
    if (r.label != 0 && r.label != 1)
      throw std::runtime_error("training manifest: label " + std::to_string(r.label) + " outside {0, 1} for subject " +
                               r.subject_id);
}

TrainResult run_training(const RunConfig& cfg) {
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  validate(cfg.model);
  validate(cfg.optim);
  const Manifest manifest = read_manifest(cfg.train_manifest);
  validate_manifest_for_training(manifest);

  DirLock lock(cfg.out_dir);
  {
    std::ofstream cfg_echo(fs::path(cfg.out_dir) / "config.json");
    cfg_echo << run_config_to_json(cfg) << "\n";
  }

  std::unique_ptr<Backbone> model;
  OptimState<float> optim_state;
  int64_t start_epoch = 0;
  if (!cfg.resume_from.empty()) {
    LoadedCheckpoint ck = load_checkpoint(cfg.resume_from);
    model = std::move(ck.model);
    if (ck.has_optim_state) optim_state = std::move(ck.optim_state);
    start_epoch = ck.epoch;
  } else {
    model = std::make_unique<Backbone>(cfg.model);
  }
  auto params = model->parameters();

  const std::string log_path = (fs::path(cfg.out_dir) / "train_log.csv").string();
  std::ofstream log(log_path, start_epoch > 0 ? std::ios::app : std::ios::out);
  if (start_epoch == 0) log << "epoch,mean_loss,train_accuracy,seconds\n";

  TrainResult result;
  double best_loss = std::numeric_limits<double>::infinity();
  result.checkpoint_path = (fs::path(cfg.out_dir) / "model.damc").string();
  result.best_checkpoint_path = (fs::path(cfg.out_dir) / "model_best.damc").string();

  std::vector<size_t> order(manifest.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    // per-epoch shuffle from splitmix64(seed ^ epoch): resume-stable
    SplitMix64 shuffle_rng(SplitMix64::mix(cfg.seed ^ static_cast<uint64_t>(epoch)));
    fisher_yates(order, shuffle_rng);

    double loss_sum = 0.0;
    int64_t correct = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const std::vector<size_t> batch_idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(stop));
      std::vector<int> labels;
      const Tensor x = load_batch(manifest, batch_idx, cfg.train_manifest, &labels);

      zero_grads(params);
      const Tensor logits = model->forward(x, /*train=*/true);
      auto [loss, dlogits] = nn::softmax_cross_entropy(logits, labels);
      model->backward(dlogits);
      optim_step(params, optim_state, cfg.optim);

      loss_sum += loss * static_cast<double>(labels.size());
      for (size_t b = 0; b < labels.size(); ++b) {
        int arg = 0;
        for (int64_t k = 1; k < logits.dims[1]; ++k)
          if (logits.at2(static_cast<int64_t>(b), k) > logits.at2(static_cast<int64_t>(b), arg)) arg = static_cast<int>(k);
        if (arg == labels[b]) ++correct;
      }
    }
    const double mean_loss = loss_sum / static_cast<double>(manifest.size());
    const double acc = static_cast<double>(correct) / static_cast<double>(manifest.size());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << epoch << "," << mean_loss << "," << acc << "," << secs << "\n";
    log.flush();
    result.log.push_back({epoch, mean_loss, acc, secs});
    result.final_train_accuracy = acc;
    result.final_mean_loss = mean_loss;
    if (mean_loss < best_loss) {
      best_loss = mean_loss;
      save_checkpoint(result.best_checkpoint_path, *model, epoch + 1, cfg.seed, &optim_state, &cfg.optim);
    }
  }
  save_checkpoint(result.checkpoint_path, *model, cfg.epochs, cfg.seed, &optim_state, &cfg.optim);
  return result;
}

MetricsReport evaluate_model(Backbone& model, const Manifest& manifest, const std::string& manifest_path,
                             std::vector<RocPoint>* roc) {
  if (manifest.empty()) throw std::runtime_error("evaluate: manifest is empty");
  std::vector<int> preds, labels;
  std::vector<double> scores;
  const size_t batch = 16;
  for (size_t start = 0; start < manifest.size(); start += batch) {
    const size_t stop = std::min(manifest.size(), start + batch);
    std::vector<size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    std::vector<int> batch_labels;
    const Tensor x = load_batch(manifest, idx, manifest_path, &batch_labels);
    const Tensor logits = model.forward(x, /*train=*/false);
    const Tensor probs = nn::softmax(logits);
    for (size_t b = 0; b < idx.size(); ++b) {
      int arg = 0;
      for (int64_t k = 1; k < logits.dims[1]; ++k)
        if (logits.at2(static_cast<int64_t>(b), k) > logits.at2(static_cast<int64_t>(b), arg)) arg = static_cast<int>(k);
      preds.push_back(arg);
      scores.push_back(static_cast<double>(probs.at2(static_cast<int64_t>(b), 1)));
      labels.push_back(batch_labels[b]);
    }
  }
  const ConfusionMatrix cm = confusion(preds, labels);
  MetricsReport r;
  r.n = cm.total();
  r.accuracy = cm.accuracy();
  r.sensitivity = cm.sensitivity();
  r.specificity = cm.specificity();
  r.auc = roc_auc(scores, labels);
  std::string tag = manifest.front().dataset_tag;
  for (const VolumeRecord& rec : manifest)
    if (rec.dataset_tag != tag) {
      tag = "mixed";
      break;
    }
  r.dataset_tag = tag;
  if (roc) *roc = roc_points(scores, labels);
  return r;
}

CvResult run_cv(const RunConfig& cfg, int k) {
  const Manifest manifest = read_manifest(cfg.train_manifest);
  validate_manifest_for_training(manifest);
  const auto folds = kfold(manifest, k, cfg.seed);

  CvResult result;
  std::vector<MetricsReport> fold_reports;
  for (int f = 0; f < k; ++f) {
    const auto& [train_m, val_m] = folds[static_cast<size_t>(f)];
    if (!subjects_disjoint(train_m, val_m))
      throw std::runtime_error("cv: leakage audit failed for fold " + std::to_string(f));

    const fs::path fold_dir = fs::path(cfg.out_dir) / ("fold_" + std::to_string(f));
    fs::create_directories(fold_dir);
    const std::string train_manifest_path = (fold_dir / "train_manifest.jsonl").string();
    const std::string val_manifest_path = (fold_dir / "val_manifest.jsonl").string();
    // fold manifests point back at the source volumes
    auto absolutize = [&](Manifest m) {
      for (VolumeRecord& r : m) r.path = resolve_volume_path(cfg.train_manifest, r);
      return m;
    };
    const Manifest train_abs = absolutize(train_m);
    const Manifest val_abs = absolutize(val_m);
    write_manifest(train_manifest_path, train_abs);
    write_manifest(val_manifest_path, val_abs);

    RunConfig fold_cfg = cfg;
    fold_cfg.train_manifest = train_manifest_path;
    fold_cfg.out_dir = fold_dir.string();
    fold_cfg.seed = SplitMix64::mix(cfg.seed ^ static_cast<uint64_t>(f + 1));
    fold_cfg.model.seed = fold_cfg.seed;
    run_training(fold_cfg);

    LoadedCheckpoint ck = load_checkpoint((fold_dir / "model.damc").string());
    MetricsReport fold_report = evaluate_model(*ck.model, val_abs, val_manifest_path);
    std::ofstream mf(fold_dir / "metrics.json");
    mf << render_report(fold_report, ReportStyle::json) << "\n";
    fold_reports.push_back(std::move(fold_report));
    result.fold_dirs.push_back(fold_dir.string());
  }
  result.aggregate = aggregate_cv(fold_reports);
  std::ofstream rf(fs::path(cfg.out_dir) / "cv_report.json");
  rf << render_report(result.aggregate, ReportStyle::json) << "\n";
  return result;
}

}  // namespace damnet
