#include "c2l/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "c2l/checkpoint.hpp"

namespace c2l {

namespace fs = std::filesystem;

std::size_t thread_budget() {
  const char* env = std::getenv("C2L_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) return 1;
  return static_cast<std::size_t>(v);
}

AugmentConfig augment_variant(const AugmentConfig& augment, const std::string& variant) {
  AugmentConfig a = augment;
  if (variant == "all") return a;
  if (variant == "none") return identity_augment();
  if (variant == "no_crop") a.crop = false;
  else if (variant == "no_rotate") a.rotate = false;
  else if (variant == "no_hflip") a.hflip = false;
  else if (variant == "no_grayscale") a.grayscale = false;
  else if (variant == "no_cutout") a.cutout = false;
  else throw ConfigError("unknown augmentation variant '" + variant + "'");
  return a;
}

std::vector<AblationRow> run_ablation(const RunConfig& config, const Dataset& pretrain, const Dataset& train,
                                      const Dataset& test, std::size_t parallel) {
  std::vector<AblationRow> cells;
  const auto queues = config.ablate.queue_sizes.empty() ? std::vector<std::size_t>{config.train.queue_size}
                                                        : config.ablate.queue_sizes;
  for (auto mode : config.ablate.modes) {
    for (auto q : queues) {
      for (const auto& aug : config.ablate.augment_variants) {
        augment_variant(config.train.augment, aug);  // reject bad names before any work
        for (std::size_t s = 0; s < config.ablate.seeds; ++s) {
          cells.push_back({mode, q, aug, config.train.seed + s, 0.0, 0.0});
        }
      }
    }
  }

  std::atomic<std::size_t> next{0};
  std::mutex fail_mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < cells.size();) {
      try {
        AblationRow& row = cells[i];
        TrainConfig tc = config.train;
        tc.mixup = row.mode;
        tc.queue_size = row.queue_size;
        tc.augment = augment_variant(config.train.augment, row.augment);
        tc.seed = row.seed;
        TrainState state = init_state(tc);
        double last_top1 = 0.0;
        c2l::train(state, tc, pretrain, TrainHooks{[&](const StepMetrics& m) { last_top1 = m.top1; }, {}, {}});
        ProbeConfig pc = config.probe;
        pc.seed = row.seed;
        row.mean_auroc = linear_probe(state.student, tc.encoder, train, test, pc).mean_auroc;
        row.final_top1 = last_top1;
      } catch (...) {
        std::lock_guard lock(fail_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(parallel, cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return cells;
}

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string resume;
  bool resume_flag = false;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Override the seed");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_flag("--deterministic", f.deterministic, "Serial execution; results are bitwise reproducible");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (!f.out.empty()) c.out = f.out;
  if (f.deterministic) c.deterministic = true;
  if (c.out.empty()) throw ConfigError("--out is required");
  return c;
}

fs::path corpus_root(const RunConfig& c, const std::string& flag) {
  const std::string d = flag.empty() ? c.data : flag;
  if (d.empty()) throw ConfigError("--data is required (corpus root with pretrain/, train/, test/)");
  return d;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s << std::setprecision(6) << std::fixed << v;
  return s.str();
}

void write_eval_csv(const fs::path& path, const std::vector<std::pair<std::uint64_t, EvalResult>>& runs) {
  std::ofstream csv(path);
  if (!csv) throw std::runtime_error("cannot write " + path.string());
  csv << "class,auroc,split,seed\n";
  for (const auto& [seed, r] : runs) {
    for (const auto& c : r.classes) {
      csv << c.name << "," << (c.auroc ? fmt(*c.auroc) : "undefined") << ",test," << seed << "\n";
    }
  }
}

int cmd_synth(const CommonFlags& f, std::ostream& out) {
  RunConfig c = resolve(f);
  if (f.seed) c.synth.seed = *f.seed;
  synth_generate(c.synth, c.out);
  c.data = c.out;
  echo_config(c, c.out);
  out << "wrote corpus to " << c.out << " (" << c.synth.num_unlabeled << " unlabeled, " << c.synth.num_labeled_train
      << " train, " << c.synth.num_labeled_test << " test)\n";
  return kExitOk;
}

struct PretrainFlags {
  std::string data;
  std::optional<std::size_t> epochs;
  std::string mixup;
  std::optional<std::size_t> stop_after;
};

int cmd_pretrain(const CommonFlags& f, const PretrainFlags& p, std::ostream& out) {
  RunConfig c = resolve(f);
  if (f.seed) c.train.seed = *f.seed;
  if (p.epochs) {
    c.train.epochs = *p.epochs;
    c.train.lr_drop_epochs.clear();
  }
  try {
    if (!p.mixup.empty()) c.train.mixup = parse_mixup_mode(p.mixup);
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const fs::path dir = c.out;
  const fs::path root = corpus_root(c, p.data);
  c.data = root.string();
  fs::create_directories(dir);
  echo_config(c, dir);

  const Dataset data = Dataset::load(root / "pretrain" / "manifest.csv");
  TrainState state;
  const fs::path ckpt_path = dir / "checkpoint.c2l";
  if (f.resume_flag || !f.resume.empty()) {
    const fs::path from = f.resume.empty() ? ckpt_path : fs::path(f.resume);
    state = restore_state(load_checkpoint(from), c.train);
    out << "resuming from " << from.string() << " at epoch " << state.epoch << "\n";
  } else {
    state = init_state(c.train);
  }

  // A resumed run keeps the records of the steps it does not repeat.
  const fs::path log_path = dir / "metrics.jsonl";
  std::vector<std::string> kept;
  if (state.iteration > 0) {
    std::ifstream old(log_path);
    for (std::string line; std::getline(old, line);) {
      const Json rec = Json::parse(line, nullptr, false);
      if (!rec.is_discarded() && rec.contains("step") && rec["step"].get<std::uint64_t>() < state.iteration) {
        kept.push_back(line);
      }
    }
  }
  std::ofstream metrics(log_path, std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot open metrics log in " + dir.string());
  for (const auto& line : kept) metrics << line << "\n";
  std::size_t epochs_run = 0;
  TrainHooks hooks;
  hooks.on_step = [&](const StepMetrics& m) {
    metrics << Json{{"step", m.step}, {"epoch", m.epoch}, {"lr", m.lr}, {"loss_A", m.loss_a}, {"loss_M", m.loss_m},
                    {"top1", m.top1}}
                   .dump()
            << "\n";
    metrics.flush();
  };
  hooks.on_checkpoint = [&](const TrainState& s) { save_checkpoint(ckpt_path, full_checkpoint(s, c.train)); };
  hooks.keep_going = [&](const TrainState&) { return !p.stop_after || ++epochs_run < *p.stop_after; };
  train(state, c.train, data, hooks);

  if (state.epoch < c.train.epochs) {
    save_checkpoint(ckpt_path, full_checkpoint(state, c.train));
    out << "stopped after epoch " << state.epoch << "; resume with --resume\n";
    return kExitOk;
  }
  save_checkpoint(dir / "student.c2l", student_export(state.student, c.train.encoder));
  out << "pretrained " << state.epoch << " epochs (" << state.iteration << " steps); exported "
      << (dir / "student.c2l").string() << "\n";
  return kExitOk;
}

struct EvalFlags {
  std::string data;
  std::string encoder;
  std::string init = "checkpoint";
  std::size_t seeds = 1;
  bool strict = false;
};

int cmd_eval(const CommonFlags& f, const EvalFlags& e, bool finetune, std::ostream& out, std::ostream& err) {
  RunConfig c = resolve(f);
  if (f.seed) {
    c.train.seed = *f.seed;
    c.probe.seed = *f.seed;
    c.finetune.seed = *f.seed;
  }
  if (e.init != "checkpoint" && e.init != "random") throw ConfigError("--init must be checkpoint or random");
  if (e.init == "checkpoint" && e.encoder.empty()) throw ConfigError("--encoder is required unless --init random");
  const fs::path root = corpus_root(c, e.data);
  c.data = root.string();
  fs::create_directories(c.out);
  echo_config(c, c.out);
  const Dataset train_set = Dataset::load(root / "train" / "manifest.csv");
  const Dataset test_set = Dataset::load(root / "test" / "manifest.csv");

  std::optional<NetworkParams<float>> loaded;
  if (e.init == "checkpoint") loaded = load_encoder(e.encoder, c.train.encoder);

  std::vector<std::pair<std::uint64_t, EvalResult>> runs;
  for (std::size_t k = 0; k < e.seeds; ++k) {
    const std::uint64_t seed = (finetune ? c.finetune.seed : c.probe.seed) + k;
    const NetworkParams<float> enc = loaded ? *loaded : init_params<float>(c.train.encoder, c.train.seed + k);
    EvalResult r;
    if (finetune) {
      FineTuneConfig ft = c.finetune;
      ft.seed = seed;
      r = fine_tune(enc, c.train.encoder, train_set, test_set, ft).eval;
    } else {
      ProbeConfig pc = c.probe;
      pc.seed = seed;
      r = linear_probe(enc, c.train.encoder, train_set, test_set, pc);
    }
    for (const auto& w : r.warnings) err << "warning: " << w << "\n";
    runs.emplace_back(seed, std::move(r));
  }
  const char* name = finetune ? "finetune" : "probe";
  write_eval_csv(fs::path(c.out) / (std::string(name) + ".csv"), runs);
  double total = 0.0;
  bool undefined = false;
  for (const auto& [seed, r] : runs) {
    total += r.mean_auroc;
    undefined = undefined || r.any_undefined();
  }
  out << name << " init=" << e.init << " seeds=" << runs.size() << " mean_auroc=" << fmt(total / runs.size()) << "\n";
  if (undefined && e.strict) {
    err << "error: at least one class AUROC is undefined (--strict)\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_ablate(const CommonFlags& f, const std::string& data_flag, std::ostream& out) {
  RunConfig c = resolve(f);
  if (f.seed) c.train.seed = *f.seed;
  const fs::path root = corpus_root(c, data_flag);
  c.data = root.string();
  fs::create_directories(c.out);
  echo_config(c, c.out);
  const Dataset pre = Dataset::load(root / "pretrain" / "manifest.csv");
  const Dataset tr = Dataset::load(root / "train" / "manifest.csv");
  const Dataset te = Dataset::load(root / "test" / "manifest.csv");
  const std::size_t parallel = c.deterministic ? 1 : std::min(thread_budget(), std::max<std::size_t>(1, c.ablate.parallel));
  auto rows = run_ablation(c, pre, tr, te, parallel);

  std::ofstream cells(fs::path(c.out) / "ablation_cells.csv");
  cells << "mixup,queue_size,augment,seed,mean_auroc,final_top1\n";
  for (const auto& r : rows) {
    cells << mixup_mode_name(r.mode) << "," << r.queue_size << "," << r.augment << "," << r.seed << ","
          << fmt(r.mean_auroc) << "," << fmt(r.final_top1) << "\n";
  }

  // One summary row per (mode, queue, augment), mean over seeds, best first.
  struct Summary {
    MixupMode mode;
    std::size_t queue;
    std::string augment;
    double sum = 0.0;
    std::size_t n = 0;
  };
  std::vector<Summary> table;
  for (const auto& r : rows) {
    auto it = std::find_if(table.begin(), table.end(), [&](const Summary& s) {
      return s.mode == r.mode && s.queue == r.queue_size && s.augment == r.augment;
    });
    if (it == table.end()) {
      table.push_back({r.mode, r.queue_size, r.augment});
      it = table.end() - 1;
    }
    it->sum += r.mean_auroc;
    ++it->n;
  }
  std::stable_sort(table.begin(), table.end(),
                   [](const Summary& a, const Summary& b) { return a.sum / a.n > b.sum / b.n; });
  std::ofstream summary(fs::path(c.out) / "ablation.csv");
  summary << "mixup,queue_size,augment,seeds,mean_auroc\n";
  out << std::left << std::setw(14) << "mixup" << std::setw(8) << "queue" << std::setw(14) << "augment"
      << "mean_auroc\n";
  for (const auto& s : table) {
    summary << mixup_mode_name(s.mode) << "," << s.queue << "," << s.augment << "," << s.n << "," << fmt(s.sum / s.n)
            << "\n";
    out << std::left << std::setw(14) << mixup_mode_name(s.mode) << std::setw(8) << s.queue << std::setw(14)
        << s.augment << fmt(s.sum / s.n) << "\n";
  }
  return kExitOk;
}

int cmd_export(const std::string& from, const std::string& to, std::ostream& out) {
  if (from.empty() || to.empty()) throw ConfigError("export needs --from and --out");
  Checkpoint c = load_checkpoint(from);
  save_checkpoint(to, student_export(c.student, c.encoder));
  out << "exported student of " << from << " to " << to << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive self-supervised pretraining for grayscale images", "c2l"};
  app.require_subcommand(1);

  CommonFlags synth_f, pre_f, probe_f, ft_f, abl_f;
  PretrainFlags pre;
  EvalFlags probe_e, ft_e;
  std::string abl_data, export_from, export_out;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus");
  add_common(synth, synth_f);

  auto* pretrain = app.add_subcommand("pretrain", "Run contrastive pretraining");
  add_common(pretrain, pre_f);
  pretrain->add_option("--data", pre.data, "Corpus root");
  pretrain->add_option("--epochs", pre.epochs, "Override the epoch count (drop epochs rescale)");
  pretrain->add_option("--mixup", pre.mixup, "Mixup variant: none, traditional, batch, batch_loss_m, full");
  pretrain->add_option("--resume", pre_f.resume, "Resume from a full checkpoint (default <out>/checkpoint.c2l)")
      ->expected(0, 1);
  pretrain->add_option("--stop-after-epochs", pre.stop_after, "Stop (resumably) after this many epochs");

  for (auto [name, flags, ev, desc] :
       {std::tuple{"probe", &probe_f, &probe_e, "Linear probe on frozen encoder features"},
        std::tuple{"finetune", &ft_f, &ft_e, "Fine-tune the encoder with a linear head"}}) {
    auto* cmd = app.add_subcommand(name, desc);
    add_common(cmd, *flags);
    cmd->add_option("--data", ev->data, "Corpus root");
    cmd->add_option("--encoder", ev->encoder, "Encoder checkpoint or export");
    cmd->add_option("--init", ev->init, "checkpoint or random");
    cmd->add_option("--seeds", ev->seeds, "Number of consecutive seeds")->check(CLI::PositiveNumber);
    cmd->add_flag("--strict", ev->strict, "Fail if any class AUROC is undefined");
  }

  auto* ablate = app.add_subcommand("ablate", "Mixup / queue / augmentation ablation grid");
  add_common(ablate, abl_f);
  ablate->add_option("--data", abl_data, "Corpus root");

  auto* exp = app.add_subcommand("export", "Extract the student from a full checkpoint");
  exp->add_option("--from", export_from, "Full checkpoint")->check(CLI::ExistingFile);
  exp->add_option("--out", export_out, "Destination file");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }
  pre_f.resume_flag = pretrain->count("--resume") > 0;

  try {
    if (*synth) return cmd_synth(synth_f, out);
    if (*pretrain) return cmd_pretrain(pre_f, pre, out);
    if (app.got_subcommand("probe")) return cmd_eval(probe_f, probe_e, false, out, err);
    if (app.got_subcommand("finetune")) return cmd_eval(ft_f, ft_e, true, out, err);
    if (*ablate) return cmd_ablate(abl_f, abl_data, out);
    if (*exp) return cmd_export(export_from, export_out, out);
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace c2l
