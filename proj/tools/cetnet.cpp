// cetnet: command-line toolkit for the cross-enhancement transformer.
//
// Subcommands: synth, train, eval, predict, gradcheck, ablate, convert.
// Every file-producing command writes a run manifest (resolved config, seed,
// input digests, tool version) alongside its outputs, so a run can be
// reproduced bit-for-bit from the manifest alone.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cetnet/config.hpp"
#include "cetnet/version.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

struct CommonOptions {
  std::string config_path;
  // Flag overrides; only applied when set (precedence: flags > file > defaults).
  std::optional<std::size_t> epochs, layers, decoders, heads, window, frame_step, model_dim;
  std::optional<double> lr, lambda, beta, grad_clip, lr_decay, sigma;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> cross_mode;
};

void add_common_flags(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--config", opt.config_path, "Key=value config file");
  cmd->add_option("--epochs", opt.epochs, "Override train.epochs");
  cmd->add_option("--lr", opt.lr, "Override train.learning_rate");
  cmd->add_option("--seed", opt.seed, "Override train.seed");
  cmd->add_option("--layers", opt.layers, "Override model.num_layers");
  cmd->add_option("--decoders", opt.decoders, "Override model.num_decoders");
  cmd->add_option("--heads", opt.heads, "Override model.heads");
  cmd->add_option("--window", opt.window, "Override model.window (0 = global attention)");
  cmd->add_option("--model-dim", opt.model_dim, "Override model.model_dim");
  cmd->add_option("--cross-mode", opt.cross_mode,
                  "Override model.cross_mode (all|none|ahead|behind|ahead_only|behind_only)");
  cmd->add_option("--lambda", opt.lambda, "Override loss.lambda (smoothing weight)");
  cmd->add_option("--beta", opt.beta, "Override loss.beta (circle weight)");
  cmd->add_option("--grad-clip", opt.grad_clip, "Override train.grad_clip (0 disables)");
  cmd->add_option("--lr-decay", opt.lr_decay, "Override train.lr_decay (1 disables)");
  cmd->add_option("--frame-step", opt.frame_step, "Override data.frame_step");
  cmd->add_option("--sigma", opt.sigma, "Override synth.noise_sigma");
}

cetnet::ResolvedConfig load_config(const CommonOptions& opt) {
  std::map<std::string, std::string> kv;
  if (!opt.config_path.empty()) kv = cetnet::parse_config_file(opt.config_path);
  cetnet::ResolvedConfig cfg = cetnet::resolve_config(kv);
  if (opt.epochs) cfg.train.epochs = *opt.epochs;
  if (opt.lr) cfg.train.learning_rate = *opt.lr;
  if (opt.seed) cfg.train.seed = *opt.seed;
  if (opt.layers) cfg.train.model.num_layers = *opt.layers;
  if (opt.decoders) cfg.train.model.num_decoders = *opt.decoders;
  if (opt.heads) cfg.train.model.heads = *opt.heads;
  if (opt.window) cfg.train.model.window = *opt.window;
  if (opt.model_dim) cfg.train.model.model_dim = *opt.model_dim;
  if (opt.cross_mode) cfg.train.model.cross_mode = cetnet::cross_mode_from_string(*opt.cross_mode);
  if (opt.lambda) cfg.train.loss.lambda = *opt.lambda;
  if (opt.beta) cfg.train.loss.beta = *opt.beta;
  if (opt.grad_clip) cfg.train.grad_clip = *opt.grad_clip;
  if (opt.lr_decay) cfg.train.lr_decay = *opt.lr_decay;
  if (opt.frame_step) cfg.frame_step = *opt.frame_step;
  if (opt.sigma) cfg.synth.noise_sigma = *opt.sigma;
  return cfg;
}

ordered_json config_json(const cetnet::ResolvedConfig& cfg) {
  ordered_json j;
  for (const auto& [key, value] : cetnet::serialize_config(cfg)) j[key] = value;
  return j;
}

void write_manifest(const std::string& path, const std::string& command,
                    const cetnet::ResolvedConfig& cfg,
                    const std::map<std::string, std::string>& inputs) {
  ordered_json j;
  j["tool"] = std::string(cetnet::kToolName) + " " + cetnet::kVersion;
  j["command"] = command;
  j["seed"] = cfg.train.seed;
  j["config"] = config_json(cfg);
  ordered_json in;
  for (const auto& [file, digest] : inputs) in[file] = digest;
  j["inputs"] = in;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw cetnet::DataError("cannot write manifest '" + path + "'");
  out << j.dump(2) << "\n";
}

// Digests for every file a dataset split depends on.
std::map<std::string, std::string> dataset_digests(const std::string& root,
                                                   const std::string& split) {
  std::map<std::string, std::string> d;
  const std::string mapping = root + "/mapping.txt";
  const std::string split_file = root + "/splits/" + split + ".split";
  d[mapping] = cetnet::file_digest(mapping);
  d[split_file] = cetnet::file_digest(split_file);
  for (const auto& id : cetnet::load_split(root, split)) {
    const std::string feat = root + "/features/" + id + ".cetf";
    const std::string labels = root + "/groundTruth/" + id + ".txt";
    d[feat] = cetnet::file_digest(feat);
    d[labels] = cetnet::file_digest(labels);
  }
  return d;
}

// Fills model.input_dim / model.num_classes from the dataset when left 0.
void infer_model_dims(cetnet::ModelConfig& model, const cetnet::Dataset& ds) {
  if (model.input_dim == 0 && !ds.videos.empty()) model.input_dim = ds.videos[0].features.cols();
  if (model.num_classes == 0) model.num_classes = ds.label_map.size();
}

std::string metrics_row(const cetnet::MetricReport& r) {
  return cetnet::detail::fixed4(r.acc) + "  " + cetnet::detail::fixed4(r.edit) + "  " +
         cetnet::detail::fixed4(r.f1_10) + "  " + cetnet::detail::fixed4(r.f1_25) + "  " +
         cetnet::detail::fixed4(r.f1_50);
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_synth(const CommonOptions& opt, const std::string& out_dir) {
  cetnet::ResolvedConfig cfg = load_config(opt);
  cetnet::SynthDataset ds = cetnet::synth_generate(cfg.synth, cfg.train.seed);
  fs::create_directories(out_dir);
  cetnet::save_dataset(out_dir, ds.label_map, ds.train, ds.test);

  std::map<std::string, std::string> inputs;
  if (!opt.config_path.empty()) inputs[opt.config_path] = cetnet::file_digest(opt.config_path);
  write_manifest(out_dir + "/manifest.json", "synth", cfg, inputs);

  std::size_t frames = 0;
  for (const auto& v : ds.train) frames += v.labels.size();
  std::cout << "synth: wrote " << ds.train.size() << " train / " << ds.test.size()
            << " test videos (" << frames << " train frames, " << cfg.synth.num_classes
            << " classes) to " << out_dir << "\n";
  return 0;
}

int cmd_train(const CommonOptions& opt, const std::string& data_dir,
              const std::string& out_dir) {
  cetnet::ResolvedConfig cfg = load_config(opt);
  const std::size_t step = cfg.effective_frame_step();
  cetnet::Dataset ds = cetnet::load_dataset(data_dir, cfg.train_split, step);
  infer_model_dims(cfg.train.model, ds);
  cfg.train.validate();

  fs::create_directories(out_dir);
  cfg.train.checkpoint_path = out_dir + "/model.cetm";
  cfg.train.log_path = out_dir + "/train_log.jsonl";

  cetnet::CetModel model(cfg.train.model, cfg.train.seed);
  cetnet::TrainResult result = cetnet::train(model, ds.videos, cfg.train);

  std::map<std::string, std::string> inputs = dataset_digests(data_dir, cfg.train_split);
  if (!opt.config_path.empty()) inputs[opt.config_path] = cetnet::file_digest(opt.config_path);
  write_manifest(out_dir + "/manifest.json", "train", cfg, inputs);

  const cetnet::EpochLog& last = result.log.back();
  std::cout << "train: " << ds.videos.size() << " videos, " << cfg.train.epochs
            << " epochs; final mean_loss=" << last.mean_loss << " train_acc=" << last.train_acc
            << "\n"
            << "train: wrote " << cfg.train.checkpoint_path << "\n";
  return 0;
}

int cmd_eval(const CommonOptions& opt, const std::string& checkpoint,
             const std::string& data_dir, const std::string& split_flag, bool as_json,
             const std::string& out_dir) {
  cetnet::ResolvedConfig cfg = load_config(opt);
  if (!split_flag.empty()) cfg.eval_split = split_flag;
  cetnet::CetModel model = cetnet::load_checkpoint(checkpoint);
  cetnet::Dataset ds = cetnet::load_dataset(data_dir, cfg.eval_split, 1);
  cetnet::MetricReport report = cetnet::evaluate(model, ds.videos, cfg.effective_frame_step(),
                                                 cfg.eval_options);

  const std::string text = cetnet::metric_report_text(report);
  const std::string json = cetnet::metric_report_json(report);
  std::cout << (as_json ? json + "\n" : text);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream(out_dir + "/report.txt", std::ios::trunc) << text;
    std::ofstream(out_dir + "/report.json", std::ios::trunc) << json << "\n";
    std::map<std::string, std::string> inputs = dataset_digests(data_dir, cfg.eval_split);
    inputs[checkpoint] = cetnet::file_digest(checkpoint);
    if (!opt.config_path.empty()) inputs[opt.config_path] = cetnet::file_digest(opt.config_path);
    write_manifest(out_dir + "/manifest.json", "eval", cfg, inputs);
  }
  return 0;
}

int cmd_predict(const CommonOptions& opt, const std::string& checkpoint,
                const std::string& features_path, const std::string& out_path,
                const std::string& mapping_path) {
  cetnet::ResolvedConfig cfg = load_config(opt);
  cetnet::CetModel model = cetnet::load_checkpoint(checkpoint);
  cetnet::Tensor features = cetnet::load_feature_file(features_path);
  std::vector<int> pred = cetnet::predict(model, features, cfg.effective_frame_step());

  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw cetnet::DataError("cannot write '" + out_path + "'");
  if (!mapping_path.empty()) {
    cetnet::LabelMap map = cetnet::LabelMap::from_file(mapping_path);
    for (int p : pred) out << map.name_of(p) << "\n";
  } else {
    for (int p : pred) out << p << "\n";
  }

  std::map<std::string, std::string> inputs;
  inputs[checkpoint] = cetnet::file_digest(checkpoint);
  inputs[features_path] = cetnet::file_digest(features_path);
  if (!mapping_path.empty()) inputs[mapping_path] = cetnet::file_digest(mapping_path);
  if (!opt.config_path.empty()) inputs[opt.config_path] = cetnet::file_digest(opt.config_path);
  write_manifest(out_path + ".manifest.json", "predict", cfg, inputs);

  std::cout << "predict: wrote " << pred.size() << " frame labels to " << out_path << "\n";
  return 0;
}

int cmd_gradcheck(const CommonOptions& opt, double tolerance, std::size_t num_params) {
  cetnet::ResolvedConfig cfg = load_config(opt);
  cetnet::SynthDataset ds = cetnet::synth_generate(cfg.synth, cfg.train.seed);
  if (cfg.train.model.input_dim == 0) cfg.train.model.input_dim = cfg.synth.feature_dim;
  if (cfg.train.model.num_classes == 0) cfg.train.model.num_classes = cfg.synth.num_classes;
  cfg.train.validate();

  cetnet::CetModel model(cfg.train.model, cfg.train.seed);
  cetnet::GradCheckReport report =
      cetnet::grad_check(model, ds.train[0], cfg.train.loss, tolerance, num_params);

  std::cout << "gradcheck: checked=" << report.checked << " max_rel_err=" << report.max_rel_err
            << " tolerance=" << report.tolerance << " worst=" << report.worst_param << "["
            << report.worst_index << "]"
            << " status=" << (report.passed ? "PASS" : "FAIL") << "\n";
  return report.passed ? 0 : 2;
}

int cmd_ablate(const CommonOptions& opt, const std::string& data_dir, const std::string& axis,
               const std::string& out_dir) {
  cetnet::ResolvedConfig cfg = load_config(opt);
  const std::size_t step = cfg.effective_frame_step();
  cetnet::Dataset train_ds = cetnet::load_dataset(data_dir, cfg.train_split, step);
  cetnet::Dataset eval_ds = cetnet::load_dataset(data_dir, cfg.eval_split, 1);
  infer_model_dims(cfg.train.model, train_ds);
  cfg.train.validate();

  // Variant grid per axis; each row is (label, config mutation).
  std::vector<std::pair<std::string, cetnet::TrainConfig>> rows;
  if (axis == "cross_mode") {
    for (cetnet::CrossMode m :
         {cetnet::CrossMode::all, cetnet::CrossMode::none, cetnet::CrossMode::ahead,
          cetnet::CrossMode::behind, cetnet::CrossMode::ahead_only,
          cetnet::CrossMode::behind_only}) {
      cetnet::TrainConfig t = cfg.train;
      t.model.cross_mode = m;
      rows.emplace_back(cetnet::to_string(m), t);
    }
  } else if (axis == "loss") {
    const double lam = cfg.train.loss.lambda, bet = cfg.train.loss.beta;
    const std::vector<std::pair<double, double>> grid = {
        {0.0, 0.0}, {lam, 0.0}, {0.0, bet}, {lam, bet}};
    const std::vector<std::string> names = {"cls", "cls+mse", "cls+circle", "cls+mse+circle"};
    for (std::size_t i = 0; i < grid.size(); ++i) {
      cetnet::TrainConfig t = cfg.train;
      t.loss.lambda = grid[i].first;
      t.loss.beta = grid[i].second;
      rows.emplace_back(names[i], t);
    }
  } else if (axis == "layers") {
    for (std::size_t n : {1u, 2u, 3u, 4u}) {
      cetnet::TrainConfig t = cfg.train;
      t.model.num_layers = n;
      rows.emplace_back("layers=" + std::to_string(n), t);
    }
  } else if (axis == "heads") {
    for (std::size_t h : {1u, 2u, 4u}) {
      if (cfg.train.model.model_dim % (cfg.train.model.r * h) != 0) continue;
      cetnet::TrainConfig t = cfg.train;
      t.model.heads = h;
      rows.emplace_back("heads=" + std::to_string(h), t);
    }
  } else {
    throw cetnet::ConfigError("ablate: unknown axis '" + axis +
                              "' (expected cross_mode|loss|layers|heads)");
  }

  fs::create_directories(out_dir);
  ordered_json table = ordered_json::array();
  std::cout << "variant                acc      edit     f1_10    f1_25    f1_50\n";
  for (auto& [label, train_cfg] : rows) {
    train_cfg.validate();
    cetnet::CetModel model(train_cfg.model, train_cfg.seed);
    cetnet::train(model, train_ds.videos, train_cfg);
    cetnet::MetricReport report =
        cetnet::evaluate(model, eval_ds.videos, step, cfg.eval_options);

    std::string padded = label;
    padded.resize(20, ' ');
    std::cout << padded << "   " << metrics_row(report) << "\n";

    ordered_json row;
    row["variant"] = label;
    row["acc"] = report.acc;
    row["edit"] = report.edit;
    row["f1_10"] = report.f1_10;
    row["f1_25"] = report.f1_25;
    row["f1_50"] = report.f1_50;
    table.push_back(row);
  }

  std::ofstream(out_dir + "/ablation.json", std::ios::trunc) << table.dump(2) << "\n";
  std::map<std::string, std::string> inputs = dataset_digests(data_dir, cfg.train_split);
  for (const auto& [file, digest] : dataset_digests(data_dir, cfg.eval_split))
    inputs[file] = digest;
  if (!opt.config_path.empty()) inputs[opt.config_path] = cetnet::file_digest(opt.config_path);
  write_manifest(out_dir + "/manifest.json", "ablate:" + axis, cfg, inputs);
  std::cout << "ablate: wrote " << out_dir << "/ablation.json\n";
  return 0;
}

int cmd_convert(const std::string& csv_path, const std::string& out_path) {
  cetnet::csv_to_cetf(csv_path, out_path);
  cetnet::ResolvedConfig cfg;  // defaults; convert has no tunables
  std::map<std::string, std::string> inputs;
  inputs[csv_path] = cetnet::file_digest(csv_path);
  write_manifest(out_path + ".manifest.json", "convert", cfg, inputs);
  std::cout << "convert: wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cetnet: cross-enhancement transformer for temporal action segmentation"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset directory");
  CommonOptions synth_opt;
  std::string synth_out;
  add_common_flags(synth, synth_opt);
  synth->add_option("--out", synth_out, "Output dataset directory")->required();

  // train
  auto* train = app.add_subcommand("train", "Train a model on a dataset split");
  CommonOptions train_opt;
  std::string train_data, train_out;
  add_common_flags(train, train_opt);
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--out", train_out, "Run directory for checkpoint/log/manifest")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  CommonOptions eval_opt;
  std::string eval_ckpt, eval_data, eval_split, eval_out;
  bool eval_json = false;
  add_common_flags(eval, eval_opt);
  eval->add_option("--checkpoint", eval_ckpt, "CETM checkpoint file")->required();
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--split", eval_split, "Split name (default: data.eval_split)");
  eval->add_flag("--json", eval_json, "Print the report as JSON instead of text");
  eval->add_option("--out", eval_out, "Directory for report.txt/report.json/manifest");

  // predict
  auto* predict = app.add_subcommand("predict", "Label every frame of a feature file");
  CommonOptions predict_opt;
  std::string predict_ckpt, predict_features, predict_out, predict_mapping;
  add_common_flags(predict, predict_opt);
  predict->add_option("--checkpoint", predict_ckpt, "CETM checkpoint file")->required();
  predict->add_option("--features", predict_features, "CETF feature file")->required();
  predict->add_option("--out", predict_out, "Output label file")->required();
  predict->add_option("--mapping", predict_mapping,
                      "mapping.txt for class names (ids are written without it)");

  // gradcheck
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "Compare analytic gradients against finite differences");
  CommonOptions gradcheck_opt;
  double gc_tolerance = 1e-4;
  std::size_t gc_params = 200;
  add_common_flags(gradcheck, gradcheck_opt);
  gradcheck->add_option("--tolerance", gc_tolerance, "Max relative error allowed");
  gradcheck->add_option("--params", gc_params, "Number of sampled parameters");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Train/evaluate a variant grid along one axis");
  CommonOptions ablate_opt;
  std::string ablate_data, ablate_axis, ablate_out;
  add_common_flags(ablate, ablate_opt);
  ablate->add_option("--data", ablate_data, "Dataset directory")->required();
  ablate->add_option("--axis", ablate_axis, "cross_mode|loss|layers|heads")->required();
  ablate->add_option("--out", ablate_out, "Output directory for the table")->required();

  // convert
  auto* convert = app.add_subcommand("convert", "Convert a 'T,D'-header CSV to CETF");
  std::string convert_csv, convert_out;
  convert->add_option("--csv", convert_csv, "Input CSV file")->required();
  convert->add_option("--out", convert_out, "Output CETF file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_opt, synth_out);
    if (train->parsed()) return cmd_train(train_opt, train_data, train_out);
    if (eval->parsed())
      return cmd_eval(eval_opt, eval_ckpt, eval_data, eval_split, eval_json, eval_out);
    if (predict->parsed())
      return cmd_predict(predict_opt, predict_ckpt, predict_features, predict_out,
                         predict_mapping);
    if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_opt, gc_tolerance, gc_params);
    if (ablate->parsed()) return cmd_ablate(ablate_opt, ablate_data, ablate_axis, ablate_out);
    if (convert->parsed()) return cmd_convert(convert_csv, convert_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
