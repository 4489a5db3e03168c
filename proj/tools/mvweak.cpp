#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mvw/ablate.hpp"
#include "mvw/corpus.hpp"
#include "mvw/oracles.hpp"
#include "mvw/runconfig.hpp"
#include "mvw/synth.hpp"
#include "mvw/train.hpp"

namespace fs = std::filesystem;
using namespace mvw;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed_flag;
};

// precedence: --seed flag > MVWEAK_SEED > config file
RunConfig loadConfig(const Common& common) {
  RunConfig cfg = common.config_path.empty() ? RunConfig::defaults()
                                             : RunConfig::fromFile(common.config_path);
  if (const char* env = std::getenv("MVWEAK_SEED")) {
    try {
      cfg.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("MVWEAK_SEED is not an integer: ") + env);
    }
  }
  if (common.seed_flag) cfg.seed = *common.seed_flag;
  return cfg;
}

void addCommon(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config_path, "JSON config file (defaults used when absent)");
  cmd->add_option("--seed", common.seed_flag, "Seed override (wins over config and MVWEAK_SEED)");
}

ModelConfig resolveModelConfig(const RunConfig& run, const Corpus& corpus) {
  ModelConfig m = run.model;
  m.num_views = corpus.num_views;
  m.num_frames = corpus.num_frames;
  m.image_size = corpus.image_size;
  m.sl_width = corpus.sl_width > 0 ? corpus.sl_width : run.grid_rows * run.grid_cols;
  if (m.bag_classes != corpus.num_classes) m.bag_classes = corpus.num_classes;
  return m;
}

int runGenData(const Common& common, const std::string& out, int n, double train_fraction) {
  RunConfig cfg = loadConfig(common);
  buildCorpus(cfg.scenario, n, cfg.seed, out);
  DatasetIndex index = loadIndex(out);
  index = splitDataset(index, train_fraction, cfg.seed);
  saveIndex(out, index);
  std::cout << "wrote " << n << " sequences to " << out << "\n";
  return kExitOk;
}

int runFeaturize(const Common& common, const std::string& data, bool oracle,
                 const std::string& detections, const std::string& grid) {
  RunConfig cfg = loadConfig(common);
  int rows = cfg.grid_rows, cols = cfg.grid_cols;
  if (!grid.empty()) {
    const auto x = grid.find('x');
    if (x == std::string::npos) throw ConfigError("--grid must look like RxC, e.g. 4x4");
    try {
      rows = std::stoi(grid.substr(0, x));
      cols = std::stoi(grid.substr(x + 1));
    } catch (const std::exception&) {
      throw ConfigError("--grid must look like RxC, e.g. 4x4");
    }
  }
  if (rows < 1 || cols < 1) throw ConfigError("--grid: rows and cols must be >= 1");
  std::string file = detections;
  if (file.empty()) {
    if (!oracle)
      throw ConfigError("featurize needs --oracle or --detections FILE");
    file = "detections.jsonl";  // written by the synthetic generator
  }
  const int n = featurizeCorpus(data, file, rows, cols);
  std::cout << "featurized " << data << " with a " << rows << "x" << cols << " grid (N = " << n
            << ")\n";
  return kExitOk;
}

int runTrainBase(const Common& common, const std::string& data, const std::string& out) {
  RunConfig run = loadConfig(common);
  const Corpus corpus = Corpus::load(data, /*require_features=*/true);
  const ModelConfig cfg = resolveModelConfig(run, corpus);
  TrainConfig tc = run.train;
  tc.seed = run.seed;
  const BaseTrainResult result = trainBase(corpus, cfg, tc);
  fs::create_directories(out);
  saveBaseCheckpoint(fs::path(out) / "checkpoint", *result.model);
  result.history.writeJsonl(fs::path(out) / "history.jsonl");
  std::cout << "trained base model for " << tc.epochs << " epochs; final total loss "
            << result.history.epochs.back().total << "\n";
  return kExitOk;
}

int runExportEmbeddings(const Common&, const std::string& checkpoint, const std::string& data,
                        const std::string& out) {
  const auto model = loadBaseCheckpoint(checkpoint);
  const Corpus corpus = Corpus::load(data, /*require_features=*/true);
  extractEmbeddings(*model, corpus, out);
  std::cout << "wrote embeddings for " << corpus.train.size() + corpus.test.size()
            << " sequences to " << out << "\n";
  return kExitOk;
}

int runTrainDownstream(const Common& common, const std::string& data,
                       const std::string& embeddings, const std::string& task_name,
                       const std::string& out, const std::string& init_from,
                       bool no_latents) {
  RunConfig run = loadConfig(common);
  const Corpus corpus = Corpus::load(data, /*require_features=*/true);
  const Task task = taskFromString(task_name);
  DownstreamConfig cfg = run.downstreamConfig(task == Task::detection ? 1 : corpus.num_classes);
  cfg.base = resolveModelConfig(run, corpus);
  if (no_latents) cfg.use_latents = false;
  TrainConfig tc = run.train;
  tc.seed = run.seed;

  std::optional<EmbeddingStore> store;
  if (cfg.use_latents) {
    if (embeddings.empty())
      throw ConfigError("train-downstream needs --embeddings when latents are enabled");
    store = EmbeddingStore::load(embeddings);
  }
  std::unique_ptr<BaseModel<double>> base;
  if (!init_from.empty()) {
    cfg.init_from_base = true;
    base = loadBaseCheckpoint(init_from);
  } else if (cfg.init_from_base) {
    throw ConfigError("config sets init_from_base but no --init-from checkpoint was given");
  }

  const DownstreamTrainResult result =
      trainDownstream(corpus, store ? &*store : nullptr, cfg, tc, task, base.get());
  fs::create_directories(out);
  saveDownstreamCheckpoint(fs::path(out) / "checkpoint", *result.model, task);
  result.history.writeJsonl(fs::path(out) / "history.jsonl");
  std::cout << "trained downstream " << task_name << " model for " << tc.epochs
            << " epochs; final loss " << result.history.epochs.back().total << "\n";
  return kExitOk;
}

int runEvaluate(const Common&, const std::string& checkpoint, const std::string& data,
                const std::string& task_name, const std::string& embeddings,
                const std::string& out, const std::string& split, const std::string& plot_dir) {
  const Corpus corpus = Corpus::load(data, /*require_features=*/true);
  const bool on_test = split == "test";
  if (!on_test && split != "train") throw ConfigError("--split must be train or test");

  MetricsReport report;
  if (task_name == "bags") {
    const auto model = loadBaseCheckpoint(checkpoint);
    report = evaluateBags(*model, corpus, on_test);
  } else {
    const Task task = taskFromString(task_name);
    auto [model, ckpt_task] = loadDownstreamCheckpoint(checkpoint);
    if (task == Task::detection && model->config().c_task != 1)
      throw ConfigError("evaluate --task detection requires a checkpoint with c_task = 1, got " +
                        std::to_string(model->config().c_task));
    if (task == Task::recognition && model->config().c_task != corpus.num_classes)
      throw ConfigError("evaluate --task recognition requires c_task = " +
                        std::to_string(corpus.num_classes));
    std::optional<EmbeddingStore> store;
    if (model->config().use_latents) {
      if (embeddings.empty())
        throw ConfigError("evaluate needs --embeddings for a latent-consuming checkpoint");
      store = EmbeddingStore::load(embeddings);
    }
    report = evaluateDownstream(*model, corpus, store ? &*store : nullptr, task, on_test);

    if (!plot_dir.empty()) {
      fs::create_directories(plot_dir);
      const auto& seqs = on_test ? corpus.test : corpus.train;
      const int c_task = model->config().c_task;
      Matd scores(seqs.size() * corpus.num_frames, c_task);
      Mati labels(seqs.size() * corpus.num_frames, c_task);
      for (std::size_t i = 0; i < seqs.size(); ++i) {
        const std::vector<Matd>* rho =
            model->config().use_latents ? &store->at(seqs[i].id) : nullptr;
        scores.middleRows(i * corpus.num_frames, corpus.num_frames) =
            model->forwardValues(seqs[i].input, rho);
        labels.middleRows(i * corpus.num_frames, corpus.num_frames) =
            downstreamTargets(seqs[i].frame_labels, task).cast<int>();
      }
      for (int c = 0; c < c_task; ++c) {
        const PrCurve curve = prCurve(scores.col(c), labels.col(c));
        writePrPlotSvg(fs::path(plot_dir) / ("pr_class_" + std::to_string(c) + ".svg"), curve,
                       task_name + " class " + std::to_string(c));
      }
    }
  }

  std::cout << report.toJson().dump(2) << "\n";
  if (!out.empty()) {
    fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path());
    report.write(out);
  }
  return kExitOk;
}

int runAblate(const Common& common, const std::string& data, const std::string& out,
              const std::string& seeds_arg) {
  RunConfig run = loadConfig(common);
  const Corpus corpus = Corpus::load(data, /*require_features=*/true);
  const ModelConfig base_cfg = resolveModelConfig(run, corpus);
  DownstreamConfig ds_cfg = run.downstreamConfig(1);
  ds_cfg.base = base_cfg;

  std::vector<std::uint64_t> seeds;
  std::string token;
  std::istringstream is(seeds_arg);
  while (std::getline(is, token, ',')) {
    try {
      seeds.push_back(std::stoull(token));
    } catch (const std::exception&) {
      throw ConfigError("--seeds must be a comma-separated integer list");
    }
  }
  if (seeds.size() < 3) throw ConfigError("--seeds must list at least 3 seeds");

  TrainConfig base_tc = run.train;
  base_tc.seed = run.seed;
  TrainConfig ds_tc = base_tc;
  const AblationTable table = runAblationMatrix(corpus, base_cfg, ds_cfg, base_tc, ds_tc, seeds);

  fs::create_directories(out);
  std::ofstream csv(fs::path(out) / "ablation.csv", std::ios::trunc);
  if (!csv) throw DataError("cannot write " + (fs::path(out) / "ablation.csv").string());
  csv << table.toCsv();
  std::cout << table.toCsv();
  return kExitOk;
}

int runOracleCheck(const Common& common, int instances) {
  RunConfig run = loadConfig(common);
  const OracleCheckResult res = runOracleChecks(instances, 100, run.seed == 0 ? 12345 : run.seed);
  std::cout << "loss oracle: worst gap " << res.worst_loss_gap << "\n";
  std::cout << "AP oracle: worst gap " << res.worst_ap_gap << "\n";
  std::cout << "latent gradient check: max relative error " << res.latent_grad_err << "\n";
  std::cout << "bag probe gradient check: max relative error " << res.probe_grad_err << "\n";
  if (!res.ok) {
    for (const std::string& f : res.failures) std::cerr << "FAIL: " << f << "\n";
    return kExitNumeric;
  }
  std::cout << "all oracle checks passed\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly-supervised multi-view video learning pipeline"};
  app.require_subcommand(1);

  Common common;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-view corpus");
  addCommon(gen, common);
  std::string gen_out;
  int gen_n = 40;
  double gen_fraction = 0.5;
  gen->add_option("--out", gen_out, "Corpus output directory")->required();
  gen->add_option("--n", gen_n, "Number of sequences")->capture_default_str();
  gen->add_option("--train-fraction", gen_fraction, "Train split fraction")->capture_default_str();

  auto* feat = app.add_subcommand("featurize", "Compute PD/SL vectors for a corpus");
  addCommon(feat, common);
  std::string feat_data, feat_detections, feat_grid;
  bool feat_oracle = false;
  feat->add_option("--data", feat_data, "Corpus directory")->required();
  feat->add_flag("--oracle", feat_oracle, "Use the generator's oracle detections.jsonl");
  feat->add_option("--detections", feat_detections,
                   "Detections file name inside each sequence directory");
  feat->add_option("--grid", feat_grid, "Grid as RxC (default from config, 4x4)");

  auto* tb = app.add_subcommand("train-base", "Train the weak-label base model");
  addCommon(tb, common);
  std::string tb_data, tb_out;
  tb->add_option("--data", tb_data, "Corpus directory")->required();
  tb->add_option("--out", tb_out, "Output directory (checkpoint/, history.jsonl)")->required();

  auto* ex = app.add_subcommand("export-embeddings", "Write latent embeddings for every sequence");
  addCommon(ex, common);
  std::string ex_ckpt, ex_data, ex_out;
  ex->add_option("--checkpoint", ex_ckpt, "Base checkpoint directory")->required();
  ex->add_option("--data", ex_data, "Corpus directory")->required();
  ex->add_option("--out", ex_out, "Embedding store directory")->required();

  auto* td = app.add_subcommand("train-downstream", "Train a frame-level downstream model");
  addCommon(td, common);
  std::string td_data, td_embeddings, td_task = "detection", td_out, td_init;
  bool td_no_latents = false;
  td->add_option("--data", td_data, "Corpus directory")->required();
  td->add_option("--embeddings", td_embeddings, "Embedding store directory");
  td->add_option("--task", td_task, "detection or recognition")->capture_default_str();
  td->add_option("--out", td_out, "Output directory")->required();
  td->add_option("--init-from", td_init, "Base checkpoint for weight transfer");
  td->add_flag("--no-latents", td_no_latents, "Disable the latent path (baseline mode)");

  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint and print metrics");
  addCommon(ev, common);
  std::string ev_ckpt, ev_data, ev_task = "detection", ev_embeddings, ev_out, ev_plot;
  std::string ev_split = "test";
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint directory")->required();
  ev->add_option("--data", ev_data, "Corpus directory")->required();
  ev->add_option("--task", ev_task, "detection, recognition or bags")->capture_default_str();
  ev->add_option("--embeddings", ev_embeddings, "Embedding store directory");
  ev->add_option("--out", ev_out, "metrics.json output path");
  ev->add_option("--split", ev_split, "train or test")->capture_default_str();
  ev->add_option("--plot-dir", ev_plot, "Write per-class precision-recall SVG plots here");

  auto* ab = app.add_subcommand("ablate", "Run the 5-variant ablation matrix");
  addCommon(ab, common);
  std::string ab_data, ab_out, ab_seeds = "1,2,3";
  ab->add_option("--data", ab_data, "Corpus directory")->required();
  ab->add_option("--out", ab_out, "Output directory for ablation.csv")->required();
  ab->add_option("--seeds", ab_seeds, "Comma-separated seeds (at least 3)")->capture_default_str();

  auto* oc = app.add_subcommand("oracle-check", "Run loss/AP oracle equivalences and gradient checks");
  addCommon(oc, common);
  int oc_instances = 200;
  oc->add_option("--instances", oc_instances, "Loss oracle instance count")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return runGenData(common, gen_out, gen_n, gen_fraction);
    if (feat->parsed()) return runFeaturize(common, feat_data, feat_oracle, feat_detections, feat_grid);
    if (tb->parsed()) return runTrainBase(common, tb_data, tb_out);
    if (ex->parsed()) return runExportEmbeddings(common, ex_ckpt, ex_data, ex_out);
    if (td->parsed())
      return runTrainDownstream(common, td_data, td_embeddings, td_task, td_out, td_init,
                                td_no_latents);
    if (ev->parsed())
      return runEvaluate(common, ev_ckpt, ev_data, ev_task, ev_embeddings, ev_out, ev_split,
                         ev_plot);
    if (ab->parsed()) return runAblate(common, ab_data, ab_out, ab_seeds);
    if (oc->parsed()) return runOracleCheck(common, oc_instances);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
