#include "nplda/cli.hpp"

#include "nplda/baselines.hpp"
#include "nplda/embeddings_io.hpp"
#include "nplda/error.hpp"
#include "nplda/generative_plda.hpp"
#include "nplda/metrics.hpp"
#include "nplda/model_io.hpp"
#include "nplda/neural_plda.hpp"
#include "nplda/preprocess.hpp"
#include "nplda/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace nplda {

namespace {

using json = nlohmann::json;

// Records the invocation next to the primary output as <out>.manifest.json.
void write_manifest(const CLI::App& sub, const std::string& out, const json& extra = json::object()) {
  json m;
  m["command"] = sub.get_name();
  m["toolkit_version"] = kToolkitVersion;
  json config = json::object();
  for (const auto* opt : sub.get_options()) {
    if (opt->get_name() == "--help" || opt->get_name().empty()) continue;
    std::string key = opt->get_name();
    while (!key.empty() && key.front() == '-') key.erase(key.begin());
    const auto& res = opt->results();
    if (res.empty())
      config[key] = opt->get_default_str().empty() ? json(nullptr) : json(opt->get_default_str());
    else if (res.size() == 1)
      config[key] = res.front();
    else
      config[key] = res;
  }
  m["config"] = config;
  m["seed"] = config.contains("seed") ? config["seed"] : json(nullptr);
  m["outputs"] = json::array({out});
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  std::ofstream f(out + ".manifest.json");
  if (!f) throw Error("cannot write manifest for '" + out + "'");
  f << m.dump(2) << '\n';
}

// Concatenates several embedding files; ids must be unique across them.
EmbeddingSet load_all(const std::vector<std::string>& paths) {
  EmbeddingSet set = load_embeddings(paths.front());
  for (std::size_t i = 1; i < paths.size(); ++i) {
    const EmbeddingSet more = load_embeddings(paths[i]);
    if (more.dim() != set.dim())
      throw PreconditionError("'" + paths[i] + "' has dimension " + std::to_string(more.dim()) + ", expected " +
                              std::to_string(set.dim()));
    for (std::size_t k = 0; k < more.size(); ++k) set.add(more[k]);
  }
  return set;
}

EmbeddingSet preprocess_set(const Preprocessor& pre, const EmbeddingSet& raw) {
  if (pre.in_dim() != raw.dim())
    throw PreconditionError("model expects " + std::to_string(pre.in_dim()) + "-dimensional embeddings, got " +
                            std::to_string(raw.dim()));
  return pre.apply(raw);
}

ScoreSet score_with_model(const ModelFile& file, const std::vector<Trial>& trials, const EmbeddingSet& raw) {
  switch (detect_kind(file)) {
    case ModelKind::neural_plda:
      return forward_batch(neural_plda_from(file), trials, raw);
    case ModelKind::generative_plda: {
      const auto g = generative_from(file);
      const EmbeddingSet data = g.pre ? preprocess_set(*g.pre, raw) : raw;
      const ScoreMatrices pq = derive_pq(g.plda);
      ScoreSet out;
      out.trials = trials;
      for (const auto& t : trials)
        out.scores.push_back(plda_score(g.plda, pq, data[data.index_of(t.enroll_id)].vector,
                                        data[data.index_of(t.test_id)].vector));
      return out;
    }
    case ModelKind::dplda: {
      const auto m = dplda_from(file);
      return dplda_score_trials(m.model, trials, preprocess_set(m.pre, raw));
    }
    case ModelKind::pairwise_gaussian: {
      const auto m = gaussian_from(file);
      return gb_score_trials(m.model, trials, preprocess_set(m.pre, raw));
    }
  }
  throw Error("unknown model kind");
}

struct SynthArgs {
  int speakers = 0, sessions = 0, dim = 0, rank = 0;
  std::uint64_t seed = 0;
  std::string part = "train";
  double residual_scale = 1.0;
  double subspace_scale = 0.5;
  std::string out, model_out;
};

void cmd_synth(const CLI::App& sub, const SynthArgs& a) {
  GenerativePlda model = random_plda(a.dim, a.rank, a.seed, a.subspace_scale);
  if (a.model_out.size()) save_model(a.model_out, GenerativeBundle{std::nullopt, model});
  model.sigma *= a.residual_scale;
  // Each part draws from its own stream derived from the one seed.
  std::seed_seq seq(a.part.begin(), a.part.end());
  std::vector<std::uint64_t> mix(1);
  seq.generate(mix.begin(), mix.end());
  SynthOptions opt;
  opt.speaker_prefix = a.part + "_spk";
  const EmbeddingSet set = sample_synthetic(model, a.speakers, a.sessions, a.seed ^ (mix[0] * 0x9E3779B97F4A7C15ull), opt);
  write_embeddings(a.out, set);
  write_manifest(sub, a.out);
}

struct TrialsArgs {
  std::string embeddings, out;
  std::size_t targets = 0, nontargets = 0;
  std::uint64_t seed = 0;
};

void cmd_trials(const CLI::App& sub, const TrialsArgs& a) {
  write_trials(a.out, sample_training_trials(load_embeddings(a.embeddings), a.targets, a.nontargets, a.seed));
  write_manifest(sub, a.out);
}

struct EstimateArgs {
  std::string embeddings, out;
  int lda_dim = 0, rank = 0;
};

void cmd_estimate(const CLI::App& sub, const EstimateArgs& a, std::ostream& log) {
  const EmbeddingSet raw = load_embeddings(a.embeddings);
  LdaDiagnostics diag;
  GenerativeBundle g;
  g.pre = estimate_preprocessor(raw, a.lda_dim, &diag);
  if (diag.singular_within_scatter) log << "warning: within-class scatter is singular; ridge fallback used\n";
  std::vector<double> ll;
  g.plda = estimate_plda(g.pre->apply(raw), a.rank, {}, &ll);
  save_model(a.out, g);
  write_manifest(sub, a.out, {{"em_iterations", ll.size() - 1}, {"final_log_likelihood", ll.back()}});
}

struct TrainArgs {
  std::string backend = "nplda", init = "generative", loss = "soft_cprimary";
  std::string trials, val_trials, plda, out, checkpoint_prefix;
  std::vector<std::string> embeddings;
  int epochs = 30, batch_size = 4096, dim = 0;
  double lr = 1e-3, alpha = 20.0, lambda = 0.1, bce_weight = 0.1, momentum = 0.9;
  std::uint64_t seed = 0;
  bool fit_thresholds = false;
};

TrainConfig config_from(const TrainArgs& a) {
  TrainConfig cfg;
  cfg.batch_size = a.batch_size;
  cfg.lr = a.lr;
  cfg.max_epochs = a.epochs;
  cfg.seed = a.seed;
  cfg.loss = parse_loss_kind(a.loss);
  cfg.alpha = a.alpha;
  cfg.lambda_reg = a.lambda;
  cfg.bce_mix_weight = a.bce_weight;
  cfg.momentum = a.momentum;
  cfg.fit_thresholds = a.fit_thresholds;
  return cfg;
}

void cmd_train(const CLI::App& sub, const TrainArgs& a, std::ostream& log) {
  const TrainConfig cfg = config_from(a);
  const EmbeddingSet raw = load_all(a.embeddings);
  const auto trials = load_trials(a.trials);
  const auto val = a.val_trials.empty() ? std::vector<Trial>{} : load_trials(a.val_trials);
  std::optional<GenerativeBundle> gen;
  if (!a.plda.empty()) {
    gen = load_generative(a.plda);
    if (!gen->pre) throw PreconditionError("'" + a.plda + "' has no preprocessing blocks (W1, b1)");
  }
  if (a.init == "generative" && !gen) throw PreconditionError("--init generative requires --plda");
  if (a.backend != "nplda" && !gen) throw PreconditionError("--backend " + a.backend + " requires --plda");
  if (a.backend != "gb" && cfg.max_epochs > 0 && val.empty())
    throw PreconditionError("training requires --val-trials");

  TrainHistory history;
  const std::string history_path = a.out + ".history.tsv";
  auto report = [&](const EpochRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %d  train %.6f  val %.6f  lr %.3g  val minC %.4f\n", r.epoch, r.train_loss,
                  r.val_loss, r.lr, r.val_min_c_primary);
    log << buf;
  };

  if (a.backend == "nplda") {
    NeuralPldaParams init;
    std::optional<NeuralPldaParams> reference;
    if (gen) reference = init_from_generative(*gen->pre, gen->plda);
    if (a.init == "generative") {
      init = *reference;
    } else {
      const int d = a.dim > 0 ? a.dim : (gen ? gen->plda.dim() : 0);
      if (d < 1) throw PreconditionError("--init random needs --dim or --plda to fix the network width");
      init = init_random(raw.dim(), d, a.seed);
    }
    if (cfg.loss == LossKind::bce_reg && !reference) throw PreconditionError("--loss bce_reg requires --plda");
    EpochCallback cb = [&](const EpochRecord& r, const TrainableBackend& m) {
      report(r);
      if (!a.checkpoint_prefix.empty())
        save_model(a.checkpoint_prefix + ".epoch" + std::to_string(r.epoch) + ".model",
                   static_cast<const NeuralPldaBackend&>(m).params());
    };
    auto [params, h] = train(init, trials, raw, val, cfg, reference, cb);
    history = std::move(h);
    save_model(a.out, params);
  } else if (a.backend == "dplda") {
    const EmbeddingSet processed = gen->pre->apply(raw);
    DpldaModel init;
    if (a.init == "generative") {
      init = dplda_init_from_plda(gen->plda, derive_pq(gen->plda));
    } else {
      std::mt19937_64 rng(a.seed);
      std::normal_distribution<double> normal(0.0, 0.01);
      init.w.resize(dplda_expansion_size(processed.dim()));
      for (Eigen::Index i = 0; i < init.w.size(); ++i) init.w[i] = normal(rng);
      init.theta = default_thresholds();
    }
    DpldaModel m = dplda_train(init, trials, val, processed, cfg, &history);
    for (const auto& r : history.epochs) report(r);
    save_model(a.out, DpldaBundle{*gen->pre, m});
  } else {
    const EmbeddingSet processed = gen->pre->apply(raw);
    save_model(a.out, GaussianBundle{*gen->pre, gb_estimate(trials, processed)});
  }
  write_history(history_path, history);
  write_manifest(sub, a.out, {{"history", history_path}, {"lr_halvings", history.lr_halvings}});
}

struct ScoreArgs {
  std::string model, trials, out;
  std::vector<std::string> embeddings;
};

void cmd_score(const CLI::App& sub, const ScoreArgs& a) {
  const ScoreSet s = score_with_model(read_model_file(a.model), load_trials(a.trials), load_all(a.embeddings));
  write_scores(a.out, s);
  write_manifest(sub, a.out);
}

ScoreSet labeled_scores(const std::string& scores, const std::string& trials) {
  ScoreSet s = load_scores(scores);
  attach_labels(s, load_trials(trials));
  return s;
}

struct EvalArgs {
  std::string scores, trials, out;
  bool tsv = false;
};

void cmd_eval(const CLI::App& sub, const EvalArgs& a, std::ostream& out) {
  const ScoreSet s = labeled_scores(a.scores, a.trials);
  const auto c = ClassScores::from(s);
  const double eer_pct = 100.0 * eer(s);
  const auto m1 = min_c_norm(c, 99.0);
  const auto m2 = min_c_norm(c, 199.0);
  const double min_cp = 0.5 * (m1.cost + m2.cost);
  const double act_cp = actual_c_primary(s);

  std::ostringstream report;
  char buf[200];
  if (a.tsv) {
    report << "metric\tvalue\n";
    std::snprintf(buf, sizeof buf,
                  "n_target\t%zu\nn_nontarget\t%zu\neer_percent\t%.6f\nmin_c_primary\t%.6f\nact_c_primary\t%.6f\n"
                  "min_c_norm_99\t%.6f\ntheta_99\t%.9g\nmin_c_norm_199\t%.6f\ntheta_199\t%.9g\n",
                  c.target.size(), c.nontarget.size(), eer_pct, min_cp, act_cp, m1.cost, m1.theta, m2.cost, m2.theta);
    report << buf;
  } else {
    std::snprintf(buf, sizeof buf, "trials            %zu (%zu target, %zu non-target)\n",
                  c.target.size() + c.nontarget.size(), c.target.size(), c.nontarget.size());
    report << buf;
    std::snprintf(buf, sizeof buf, "EER               %.3f %%\n", eer_pct);
    report << buf;
    std::snprintf(buf, sizeof buf, "minC_primary      %.4f\n", min_cp);
    report << buf;
    std::snprintf(buf, sizeof buf, "actC_primary      %.4f\n", act_cp);
    report << buf;
    std::snprintf(buf, sizeof buf, "minC_norm(99)     %.4f at theta %.6g\n", m1.cost, m1.theta);
    report << buf;
    std::snprintf(buf, sizeof buf, "minC_norm(199)    %.4f at theta %.6g\n", m2.cost, m2.theta);
    report << buf;
  }
  out << report.str();
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    if (!f) throw Error("cannot open '" + a.out + "' for writing");
    f << report.str();
    write_manifest(sub, a.out);
  }
}

struct CalibrateArgs {
  std::string scores, trials, out, apply_scores, apply_out;
};

void cmd_calibrate(const CLI::App& sub, const CalibrateArgs& a, std::ostream& out) {
  const ScoreSet dev = labeled_scores(a.scores, a.trials);
  const AffineCalibration cal = affine_calibrate(dev);
  write_scores(a.out, cal.apply(dev));
  if (!a.apply_scores.empty()) {
    if (a.apply_out.empty()) throw PreconditionError("--apply-scores requires --apply-out");
    write_scores(a.apply_out, cal.apply(load_scores(a.apply_scores)));
  }
  char buf[120];
  std::snprintf(buf, sizeof buf, "a = %.9g  b = %.9g  (%d Newton iterations)\n", cal.a, cal.b, cal.iterations);
  out << buf;
  write_manifest(sub, a.out, {{"calibration", {{"a", cal.a}, {"b", cal.b}}}});
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Speaker-verification back-ends: PLDA, Neural PLDA, DPLDA, pairwise Gaussian"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolkitVersion);

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "Sample embeddings from a random PLDA population");
  s_synth->add_option("--speakers", synth.speakers)->required()->check(CLI::PositiveNumber);
  s_synth->add_option("--sessions", synth.sessions)->required()->check(CLI::PositiveNumber);
  s_synth->add_option("--dim", synth.dim)->required()->check(CLI::PositiveNumber);
  s_synth->add_option("--rank", synth.rank)->required()->check(CLI::PositiveNumber);
  s_synth->add_option("--seed", synth.seed)->required();
  s_synth->add_option("--part", synth.part, "Name of the split; selects speakers and sampling stream")
      ->capture_default_str();
  s_synth->add_option("--residual-scale", synth.residual_scale, "Multiplier on the residual covariance")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  s_synth->add_option("--subspace-scale", synth.subspace_scale)->capture_default_str()->check(CLI::PositiveNumber);
  s_synth->add_option("--model-out", synth.model_out, "Also write the population model");
  s_synth->add_option("--out", synth.out)->required();

  TrialsArgs trials;
  auto* s_trials = app.add_subcommand("trials", "Sample gender/source-matched training trials");
  s_trials->add_option("--embeddings", trials.embeddings)->required()->check(CLI::ExistingFile);
  s_trials->add_option("--targets", trials.targets)->required();
  s_trials->add_option("--nontargets", trials.nontargets)->required();
  s_trials->add_option("--seed", trials.seed)->required();
  s_trials->add_option("--out", trials.out)->required();

  EstimateArgs est;
  auto* s_est = app.add_subcommand("estimate", "Estimate centering, LDA and generative PLDA");
  s_est->add_option("--embeddings", est.embeddings)->required()->check(CLI::ExistingFile);
  s_est->add_option("--lda-dim", est.lda_dim)->required()->check(CLI::PositiveNumber);
  s_est->add_option("--rank", est.rank)->required()->check(CLI::PositiveNumber);
  s_est->add_option("--out", est.out)->required();

  TrainArgs tr;
  auto* s_train = app.add_subcommand("train", "Train a discriminative back-end");
  s_train->add_option("--backend", tr.backend)->capture_default_str()->check(CLI::IsMember({"nplda", "dplda", "gb"}));
  s_train->add_option("--init", tr.init)->capture_default_str()->check(CLI::IsMember({"generative", "random"}));
  s_train->add_option("--loss", tr.loss)
      ->capture_default_str()
      ->check(CLI::IsMember({"bce", "bce_reg", "soft_cprimary", "soft_plus_bce"}));
  s_train->add_option("--trials", tr.trials)->required()->check(CLI::ExistingFile);
  s_train->add_option("--val-trials", tr.val_trials)->check(CLI::ExistingFile);
  s_train->add_option("--embeddings", tr.embeddings, "One or more embedding files covering all trial ids")->required()->check(CLI::ExistingFile);
  s_train->add_option("--plda", tr.plda, "Model written by 'estimate'")->check(CLI::ExistingFile);
  s_train->add_option("--out", tr.out)->required();
  s_train->add_option("--epochs", tr.epochs)->capture_default_str()->check(CLI::NonNegativeNumber);
  s_train->add_option("--batch-size", tr.batch_size)->capture_default_str()->check(CLI::Range(2, 1 << 30));
  s_train->add_option("--lr", tr.lr)->capture_default_str()->check(CLI::PositiveNumber);
  s_train->add_option("--alpha", tr.alpha)->capture_default_str()->check(CLI::PositiveNumber);
  s_train->add_option("--lambda", tr.lambda)->capture_default_str()->check(CLI::NonNegativeNumber);
  s_train->add_option("--bce-weight", tr.bce_weight)->capture_default_str()->check(CLI::NonNegativeNumber);
  s_train->add_option("--momentum", tr.momentum)->capture_default_str()->check(CLI::Range(0.0, 0.999999));
  s_train->add_option("--dim", tr.dim, "Network width for --init random without --plda");
  s_train->add_option("--seed", tr.seed)->capture_default_str();
  s_train->add_flag("--fit-thresholds", tr.fit_thresholds,
                    "Start thresholds at the training set's minimum-cost operating points")
      ->capture_default_str();
  s_train->add_option("--checkpoint-prefix", tr.checkpoint_prefix, "Write <prefix>.epoch<k>.model every epoch");

  ScoreArgs sc;
  auto* s_score = app.add_subcommand("score", "Score a trial list with any saved model");
  s_score->add_option("--model", sc.model)->required()->check(CLI::ExistingFile);
  s_score->add_option("--trials", sc.trials)->required()->check(CLI::ExistingFile);
  s_score->add_option("--embeddings", sc.embeddings, "One or more embedding files")->required()->check(CLI::ExistingFile);
  s_score->add_option("--out", sc.out)->required();

  EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "Report EER, min/actual C_primary");
  s_eval->add_option("--scores", ev.scores)->required()->check(CLI::ExistingFile);
  s_eval->add_option("--trials", ev.trials)->required()->check(CLI::ExistingFile);
  s_eval->add_flag("--tsv", ev.tsv, "Emit a metric<TAB>value table")->capture_default_str();
  s_eval->add_option("--out", ev.out, "Also write the report to this file");

  CalibrateArgs cal;
  auto* s_cal = app.add_subcommand("calibrate", "Fit and apply an affine score calibration");
  s_cal->add_option("--scores", cal.scores)->required()->check(CLI::ExistingFile);
  s_cal->add_option("--trials", cal.trials)->required()->check(CLI::ExistingFile);
  s_cal->add_option("--out", cal.out)->required();
  s_cal->add_option("--apply-scores", cal.apply_scores, "Other scores to transform with the fitted map")
      ->check(CLI::ExistingFile);
  s_cal->add_option("--apply-out", cal.apply_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*s_synth) cmd_synth(*s_synth, synth);
    if (*s_trials) cmd_trials(*s_trials, trials);
    if (*s_est) cmd_estimate(*s_est, est, err);
    if (*s_train) cmd_train(*s_train, tr, err);
    if (*s_score) cmd_score(*s_score, sc);
    if (*s_eval) cmd_eval(*s_eval, ev, out);
    if (*s_cal) cmd_calibrate(*s_cal, cal, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace nplda
