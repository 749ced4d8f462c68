// Command-line driver: dataset synthesis, training, evaluation, attention
// probing, per-layer statistics, and the finite-difference gradient suite.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "actc/gradcheck.hpp"
#include "actc/harness.hpp"
#include "actc/probe.hpp"

using namespace actc;

namespace {

struct CliOptions {
  std::string config_path;
  std::string data_path;
  std::string checkpoint_path;
  std::string out_path;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  double alpha = 0.3;
  double threshold = 0.0;
  std::map<std::string, std::string> file_values;
};

void load_config_file(CliOptions& opt) {
  if (opt.config_path.empty()) return;
  std::ifstream in(opt.config_path);
  if (!in) throw std::runtime_error("cannot open config: " + opt.config_path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  for (auto& [k, v] : io::parse_kv(text)) opt.file_values[k] = v;
}

// CLI flags override file values; file values override defaults.
template <typename T>
void apply(const CliOptions& opt, const std::string& key, T& field) {
  auto it = opt.file_values.find(key);
  if (it == opt.file_values.end()) return;
  if constexpr (std::is_floating_point_v<T>)
    field = std::stod(it->second);
  else
    field = static_cast<T>(std::stoull(it->second));
}

SyntheticTaskConfig synth_config(const CliOptions& opt) {
  SyntheticTaskConfig c;
  c.seed = opt.seed;
  apply(opt, "real_tokens", c.real_tokens);
  apply(opt, "utterance_count", c.utterance_count);
  apply(opt, "min_tokens", c.min_tokens);
  apply(opt, "max_tokens", c.max_tokens);
  apply(opt, "min_frames_per_token", c.min_frames_per_token);
  apply(opt, "max_frames_per_token", c.max_frames_per_token);
  apply(opt, "noise_std", c.noise_std);
  apply(opt, "feature_dim", c.feature_dim);
  return c;
}

ModelConfig model_config(const CliOptions& opt, const Dataset& ds) {
  ModelConfig c;
  c.vocab_size = ds.vocab.size;
  c.feature_dim = ds.feature_dim;
  apply(opt, "enc_layers", c.enc_layers);
  apply(opt, "dec_layers", c.dec_layers);
  apply(opt, "heads", c.heads);
  apply(opt, "d_model", c.d_model);
  apply(opt, "d_ff", c.d_ff);
  apply(opt, "downsample", c.downsample);
  apply(opt, "max_tokens", c.max_tokens);
  return c;
}

TrainConfig train_config(const CliOptions& opt) {
  TrainConfig c;
  c.alpha = opt.alpha;
  c.lambda = opt.lambda;
  c.seed = opt.seed;
  apply(opt, "epochs", c.epochs);
  apply(opt, "batch_size", c.batch_size);
  apply(opt, "peak_lr", c.peak_lr);
  apply(opt, "warmup_steps", c.warmup_steps);
  apply(opt, "input_dropout", c.input_dropout);
  apply(opt, "splice_augment", c.splice_augment);
  return c;
}

std::vector<ProbeReport> probe_dataset(const Dataset& ds, JointSystem& sys) {
  std::vector<ProbeReport> reports;
  for (const Utterance& u : ds.utterances) {
    std::vector<std::size_t> shifted = {Vocab::kSos};
    shifted.insert(shifted.end(), u.tokens.begin(), u.tokens.end());
    ForwardOutput fwd = sys.model.decode_teacher_forced(u.features, shifted);
    reports.push_back(probe_utterance(fwd, sys.ctc, u.tokens, u.id));
  }
  return reports;
}

int cmd_synth(const CliOptions& opt) {
  Dataset ds = generate_synthetic(synth_config(opt));
  write_dataset(ds, opt.out_path);
  std::cout << "wrote " << ds.utterances.size() << " utterances to "
            << opt.out_path << "\n";
  return 0;
}

int cmd_train(const CliOptions& opt) {
  Dataset ds = read_dataset(opt.data_path);
  JointSystem sys(model_config(opt, ds), opt.seed);
  TrainConfig cfg = train_config(opt);
  TrainResult res = train(ds, sys, cfg, &std::cout);
  save_checkpoint(opt.checkpoint_path, sys, res.steps, res.shuffle_state);
  std::cout << "final loss/token " << res.loss_history.back() << "\n"
            << "saved checkpoint to " << opt.checkpoint_path << "\n";
  return 0;
}

int cmd_eval(const CliOptions& opt) {
  Dataset ds = read_dataset(opt.data_path);
  LoadedCheckpoint ckpt = load_checkpoint(opt.checkpoint_path);
  EvalResult res = evaluate(ds, ckpt.system);
  for (std::size_t i = 0; i < ds.utterances.size(); ++i)
    std::cout << ds.utterances[i].id << "\t" << res.per_utterance[i] << "\n";
  std::cout << "mean_ter\t" << res.mean_ter << "\n";
  return 0;
}

int cmd_probe(const CliOptions& opt) {
  Dataset ds = read_dataset(opt.data_path);
  LoadedCheckpoint ckpt = load_checkpoint(opt.checkpoint_path);
  std::filesystem::create_directories(opt.out_path);
  auto name = [&ds](std::size_t tok) { return ds.vocab.name(tok); };
  for (const ProbeReport& rep : probe_dataset(ds, ckpt.system)) {
    std::string path = opt.out_path + "/" + rep.utterance_id + ".tsv";
    std::ofstream out(path, std::ios::binary);
    out << render_report(rep, opt.threshold, name);
    if (!out) throw std::runtime_error("cannot write " + path);
  }
  std::cout << "wrote " << ds.utterances.size() << " reports to "
            << opt.out_path << "\n";
  return 0;
}

int cmd_stats(const CliOptions& opt) {
  Dataset ds = read_dataset(opt.data_path);
  LoadedCheckpoint ckpt = load_checkpoint(opt.checkpoint_path);
  auto stats = layer_unique_token_stats(probe_dataset(ds, ckpt.system));
  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!opt.out_path.empty()) {
    file.open(opt.out_path, std::ios::binary);
    if (!file) throw std::runtime_error("cannot write " + opt.out_path);
    out = &file;
  }
  *out << "layer\tmean_unique\tstd_unique\n";
  for (const LayerStats& s : stats)
    *out << s.layer << "\t" << s.mean_unique << "\t" << s.std_unique << "\n";
  return 0;
}

int cmd_gradcheck(const CliOptions& opt) {
  ModelConfig mc;
  mc.enc_layers = 1;
  mc.dec_layers = 1;
  mc.heads = 2;
  mc.d_model = 8;
  mc.d_ff = 8;
  mc.vocab_size = 6;
  mc.feature_dim = 6;
  JointSystem sys(mc, opt.seed);
  SeededRng rng = SeededRng(opt.seed).split(kStreamTest);
  Utterance u;
  u.id = "gradcheck";
  u.features = Tensor::matrix(6, mc.feature_dim);
  for (double& v : u.features.data) v = rng.normal();
  u.tokens = {3, 4, 3};
  TrainConfig cfg;
  cfg.alpha = opt.alpha;
  cfg.lambda = opt.lambda > 0.0 ? opt.lambda : 0.1;
  std::vector<Parameter*> params;
  for (auto& [name, p] : sys.named_params()) params.push_back(p);
  // The regularizer treats the classifier as fixed, so the differentiated
  // objective must too; otherwise numeric derivatives of W^CTC pick up the
  // regularization term the analytic gradient deliberately omits.
  CtcClassifier frozen = sys.ctc;
  auto loss = [&]() {
    sys.zero_grads();
    return joint_loss({&u}, sys, cfg, true, &frozen).total;
  };
  double err = finite_diff_check(loss, params, 1e-5);
  std::cout << "max relative gradient error " << err << " over "
            << params.size() << " tensors\n";
  if (err > 1e-4) {
    std::cerr << "gradient check FAILED (tolerance 1e-4)\n";
    return 2;
  }
  std::cout << "gradient check passed (tolerance 1e-4)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint CTC/attention toy system with attention probing"};
  app.require_subcommand(1);
  CliOptions opt;

  std::vector<CLI::Option*> seed_opts, lambda_opts, alpha_opts;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opt.config_path, "key=value config file");
    seed_opts.push_back(cmd->add_option("--seed", opt.seed, "random seed"));
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth);
  synth->add_option("--out", opt.out_path, "output dataset file")->required();

  CLI::App* train_cmd = app.add_subcommand("train", "train a joint model");
  add_common(train_cmd);
  train_cmd->add_option("--data", opt.data_path, "dataset file")->required();
  train_cmd->add_option("--checkpoint", opt.checkpoint_path,
                        "output checkpoint file")->required();
  lambda_opts.push_back(
      train_cmd->add_option("--lambda", opt.lambda, "regularization weight"));
  alpha_opts.push_back(
      train_cmd->add_option("--alpha", opt.alpha, "CTC interpolation weight"));

  CLI::App* eval_cmd = app.add_subcommand("eval", "greedy-decode and report TER");
  add_common(eval_cmd);
  eval_cmd->add_option("--data", opt.data_path, "dataset file")->required();
  eval_cmd->add_option("--checkpoint", opt.checkpoint_path, "checkpoint file")
      ->required();

  CLI::App* probe_cmd =
      app.add_subcommand("probe", "emit per-utterance attention probe TSVs");
  add_common(probe_cmd);
  probe_cmd->add_option("--data", opt.data_path, "dataset file")->required();
  probe_cmd->add_option("--checkpoint", opt.checkpoint_path, "checkpoint file")
      ->required();
  probe_cmd->add_option("--out", opt.out_path, "output directory")->required();
  probe_cmd->add_option("--threshold", opt.threshold,
                        "posterior display threshold");

  CLI::App* stats_cmd =
      app.add_subcommand("stats", "per-layer unique-token statistics");
  add_common(stats_cmd);
  stats_cmd->add_option("--data", opt.data_path, "dataset file")->required();
  stats_cmd->add_option("--checkpoint", opt.checkpoint_path, "checkpoint file")
      ->required();
  stats_cmd->add_option("--out", opt.out_path, "output TSV (default stdout)");

  CLI::App* grad_cmd =
      app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(grad_cmd);
  lambda_opts.push_back(
      grad_cmd->add_option("--lambda", opt.lambda, "regularization weight"));
  alpha_opts.push_back(
      grad_cmd->add_option("--alpha", opt.alpha, "CTC interpolation weight"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    load_config_file(opt);
    auto flag_given = [](const std::vector<CLI::Option*>& v) {
      for (const CLI::Option* o : v)
        if (o->count()) return true;
      return false;
    };
    if (!flag_given(seed_opts)) apply(opt, "seed", opt.seed);
    if (!flag_given(lambda_opts)) apply(opt, "lambda", opt.lambda);
    if (!flag_given(alpha_opts)) apply(opt, "alpha", opt.alpha);
    if (synth->parsed()) return cmd_synth(opt);
    if (train_cmd->parsed()) return cmd_train(opt);
    if (eval_cmd->parsed()) return cmd_eval(opt);
    if (probe_cmd->parsed()) return cmd_probe(opt);
    if (stats_cmd->parsed()) return cmd_stats(opt);
    if (grad_cmd->parsed()) return cmd_gradcheck(opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
