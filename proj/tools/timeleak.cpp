// timeleak: generate traces, learn tri-branch timing models, count the
// observational classes of the learned reducer and quantify the leak.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "timeleak/timeleak.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace timeleak;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kGenFailed = 2, kTrainFailed = 3, kAnalyzeFailed = 4, kReportFailed = 5 };

std::size_t default_threads() {
  if (const char* env = std::getenv("TIMELEAK_THREADS")) {
    try {
      const auto n = std::stoul(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring TIMELEAK_THREADS=" << env << "\n";
  }
  return std::max(1U, std::thread::hardware_concurrency());
}

fs::path sibling(const fs::path& path, const std::string& suffix) {
  return path.parent_path() / (path.stem().string() + suffix);
}

void write_json(const fs::path& path, const json& doc) { detail::write_file(path, doc.dump(2) + "\n"); }

std::string file_digest(const fs::path& path) { return hash_text(detail::read_file(path)); }

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

/// A subcommand whose options can also be supplied by a JSON config file.
/// Precedence: command-line flag, then the config file (a section named after
/// the subcommand, then top-level keys), then the built-in default.
class Command {
 public:
  Command(CLI::App& parent, const std::string& name, const std::string& description)
      : app_(parent.add_subcommand(name, description)) {
    app_->add_option("--config", config_path_, "JSON file with option defaults");
    option("threads", threads, "Worker threads (default: TIMELEAK_THREADS or all cores)");
  }

  template <typename T>
  CLI::Option* option(const std::string& key, T& var, const std::string& description, bool is_path = false) {
    auto* opt = app_->add_option("--" + key, var, description);
    bindings_.push_back({opt, key, is_path, [&var](const json& j) { var = j.get<T>(); }, [&var] { return json(var); }});
    return opt;
  }

  CLI::Option* path(const std::string& key, std::string& var, const std::string& description) {
    return option(key, var, description, true);
  }

  CLI::Option* flag(const std::string& key, bool& var, const std::string& description) {
    auto* opt = app_->add_flag("--" + key, var, description);
    bindings_.push_back({opt, key, false, [&var](const json& j) { var = j.get<bool>(); }, [&var] { return json(var); }});
    return opt;
  }

  void resolve() {
    if (config_path_.empty()) return;
    const auto doc = detail::read_json(config_path_);
    if (!doc.is_object()) throw Error(ErrorCode::kParseError, "config file must hold a JSON object");
    const json section = doc.contains(app_->get_name()) && doc[app_->get_name()].is_object() ? doc[app_->get_name()]
                                                                                          : json::object();
    for (auto& b : bindings_) {
      if (b.opt->count() > 0) continue;
      const json* value = section.contains(b.key) ? &section[b.key] : doc.contains(b.key) ? &doc[b.key] : nullptr;
      if (!value) continue;
      try {
        b.assign(*value);
        b.from_config = true;
      } catch (const json::exception& e) {
        throw Error(ErrorCode::kParseError, "config key '" + b.key + "': " + e.what());
      }
    }
  }

  /// Resolved non-path option values, for the manifest.
  json echo() const {
    json out = json::object();
    for (const auto& b : bindings_)
      if (!b.is_path && b.key != "threads") out[b.key] = b.value();
    return out;
  }

  std::map<std::string, std::string> paths() const {
    std::map<std::string, std::string> out;
    for (const auto& b : bindings_)
      if (b.is_path) out[b.key] = b.value().get<std::string>();
    return out;
  }

  CLI::App* app() { return app_; }

  std::size_t threads = default_threads();

 private:
  struct Binding {
    CLI::Option* opt;
    std::string key;
    bool is_path;
    std::function<void(const json&)> assign;
    std::function<json()> value;
    bool from_config = false;
  };

  CLI::App* app_;
  std::string config_path_;
  std::vector<Binding> bindings_;
};

RunManifest start_manifest(const Command& cmd, const std::string& name, std::uint64_t seed) {
  RunManifest m;
  m.command = name;
  m.seed = seed;
  m.config = cmd.echo();
  m.paths = cmd.paths();
  m.started_at = utc_timestamp();
  return m;
}

/// Model architecture and optimizer flags shared by `train` and `sweep`.
struct LearningFlags {
  std::vector<std::size_t> secret_widths{10};
  std::vector<std::size_t> public_widths{10};
  std::vector<std::size_t> joint_widths{20};
  TrainConfig config;
  double test_fraction = 0.1;
  double validation_fraction = 0.1;

  void add_to(Command& cmd) {
    cmd.option("secret-widths", secret_widths, "Hidden widths of the secret branch")->delimiter(',');
    cmd.option("public-widths", public_widths, "Hidden widths of the public branch")->delimiter(',');
    cmd.option("joint-widths", joint_widths, "Hidden widths of the joint branch")->delimiter(',');
    cmd.option("learning-rate", config.learning_rate, "Adam step size");
    cmd.option("batch-size", config.batch_size, "Mini-batch size");
    cmd.option("max-epochs", config.max_epochs, "Epoch limit");
    cmd.option("patience", config.patience, "Epochs without validation improvement before stopping");
    cmd.option("decay-patience", config.decay_patience, "Epochs without improvement before the step size decays");
    cmd.option("lr-decay", config.lr_decay, "Step size multiplier on a plateau (1 disables)");
    cmd.option("ste-clip", config.ste_clip, "Straight-through gradient passes where |preact| <= clip");
    cmd.option("seed", config.seed, "Seed for the split, initialization and batching");
    cmd.option("test-fraction", test_fraction, "Share of rows held out for testing");
    cmd.option("validation-fraction", validation_fraction, "Share of training rows held out for early stopping");
  }

  Architecture architecture(const FeatureSchema& schema, std::size_t k) const {
    Architecture arch;
    arch.n_secret = schema.n_secret();
    arch.n_public = schema.n_public();
    arch.k = k;
    arch.secret_widths = secret_widths;
    arch.public_widths = public_widths;
    arch.joint_widths = joint_widths;
    return arch;
  }
};

TraceDataset load_traces(const std::string& data, const std::string& schema_path) {
  std::optional<FeatureSchema> schema;
  if (!schema_path.empty())
    schema = load_schema(schema_path);
  else if (const auto guess = sibling(data, ".schema.json"); fs::exists(guess))
    schema = load_schema(guess);
  return load_csv(data, schema);
}

// ---------------------------------------------------------------------------

struct GenCommand {
  Command cmd;
  std::string family = "rn";
  std::string preset = "R_2";
  std::size_t variants = 1;
  std::size_t rows = 0;
  std::uint64_t seed = 0;
  double noise = 0.02;
  std::size_t secret_bits = 4;
  std::size_t public_bits = 7;
  std::string out;

  explicit GenCommand(CLI::App& app) : cmd(app, "gen", "Generate a synthetic trace CSV with schema and ground truth") {
    cmd.option("family", family, "rn | bl | sort | public")
        ->check(CLI::IsMember({"rn", "bl", "sort", "public"}));
    cmd.option("preset", preset, "R_n preset name (rn family)");
    cmd.option("i", variants, "Number of loop variants, 1..5 (bl family)");
    cmd.option("rows", rows, "Row count (0 keeps the preset's)");
    cmd.option("seed", seed, "Generator seed");
    cmd.option("noise", noise, "Multiplicative Gaussian noise std");
    cmd.option("secret-bits", secret_bits, "Inert secret bits (public family)");
    cmd.option("public-bits", public_bits, "Public input bits (public family)");
    cmd.path("out", out, "Output CSV path")->required();
  }

  int run() {
    cmd.resolve();
    auto manifest = start_manifest(cmd, "gen", seed);
    const auto t0 = std::chrono::steady_clock::now();

    std::optional<GeneratedTraces> generated;
    TraceDataset sort_data;
    if (family == "rn") {
      auto p = rn_preset(preset);
      p.seed = seed;
      p.noise_std = noise;
      if (rows) p.rows = rows;
      generated = gen_rn(p);
    } else if (family == "bl") {
      auto p = bl_preset(variants);
      p.seed = seed;
      p.noise_std = noise;
      if (rows) p.rows = rows;
      generated = gen_bl(p);
    } else if (family == "public") {
      generated = gen_public_only(secret_bits, public_bits, rows ? rows : 400, noise, seed);
    } else {
      SortDemoParams p;
      p.seed = seed;
      p.noise_std = noise;
      if (rows) p.rows = rows;
      sort_data = gen_sort_demo(p);
    }
    const TraceDataset& data = generated ? generated->dataset : sort_data;
    manifest.stage_seconds["generate"] = seconds_since(t0);

    const auto hash = manifest.content_hash();
    const fs::path csv = out;
    write_csv(data, csv);
    auto schema_doc = to_json(data.schema);
    schema_doc["manifest_hash"] = hash;
    write_json(sibling(csv, ".schema.json"), schema_doc);
    manifest.output_hashes["csv"] = file_digest(csv);
    manifest.output_hashes["schema"] = file_digest(sibling(csv, ".schema.json"));
    if (generated) {
      json truth = {{"class_sizes", to_json(generated->truth)},
                    {"conditional_entropy", generated->truth.conditional_entropy()},
                    {"manifest_hash", hash}};
      write_json(sibling(csv, ".truth.json"), truth);
      manifest.output_hashes["truth"] = file_digest(sibling(csv, ".truth.json"));
    }
    write_json(sibling(csv, ".manifest.json"), to_json(manifest));

    std::cout << "wrote " << data.size() << " rows (" << data.schema.n_secret() << " secret, "
              << data.schema.n_public() << " public features) to " << csv.string() << "\n";
    if (generated)
      std::cout << "ground truth: " << generated->truth.class_sizes.size()
                << " classes, conditional entropy " << generated->truth.conditional_entropy() << " bits\n";
    return kOk;
  }
};

struct TrainCommand {
  Command cmd;
  LearningFlags flags;
  std::string data, schema, out;
  std::size_t k = 1;

  explicit TrainCommand(CLI::App& app) : cmd(app, "train", "Train one tri-branch network at a fixed interface width") {
    cmd.path("data", data, "Trace CSV")->required();
    cmd.path("schema", schema, "Schema sidecar (default: <data>.schema.json when present)");
    cmd.option("k", k, "Interface width");
    flags.add_to(cmd);
    cmd.path("out", out, "Output model JSON")->required();
  }

  int run() {
    cmd.resolve();
    auto manifest = start_manifest(cmd, "train", flags.config.seed);
    manifest.input_hashes["data"] = file_digest(data);
    const auto t0 = std::chrono::steady_clock::now();

    const auto ds = load_traces(data, schema);
    const auto [train_set, test_set] = split(ds, flags.test_fraction, flags.config.seed);
    const auto [fit_set, valid_set] = split(train_set, flags.validation_fraction, mix_seed(flags.config.seed, 0));
    auto result = train(fit_set, valid_set, flags.architecture(ds.schema, k), flags.config);
    const auto eval = evaluate(result.network, test_set);
    result.network.metrics = {{"test_sse", eval.sse},
                              {"test_r2", eval.r2},
                              {"max_residual", eval.max_residual},
                              {"best_epoch", result.best_epoch}};
    manifest.stage_seconds["train"] = seconds_since(t0);

    auto doc = to_json(result.network);
    doc["manifest_hash"] = manifest.content_hash();
    write_json(out, doc);
    manifest.output_hashes["model"] = file_digest(out);
    write_json(sibling(out, ".manifest.json"), to_json(manifest));
    std::cout << "k=" << k << " test SSE " << eval.sse << ", R^2 " << eval.r2 << ", best epoch "
              << result.best_epoch << "\n";
    return kOk;
  }
};

struct SweepCommand {
  Command cmd;
  LearningFlags flags;
  std::string data, schema, out;
  std::size_t kmax = 4;
  std::size_t seeds_per_k = 3;
  double tau = kDefaultTau;
  double epsilon = -1.0;

  explicit SweepCommand(CLI::App& app) : cmd(app, "sweep", "Train across interface widths and pick k by the SSE elbow") {
    cmd.path("data", data, "Trace CSV")->required();
    cmd.path("schema", schema, "Schema sidecar (default: <data>.schema.json when present)");
    cmd.option("kmax", kmax, "Largest interface width tried");
    cmd.option("seeds-per-k", seeds_per_k, "Training replicas per width; the best test SSE is kept");
    cmd.option("tau", tau, "Relative SSE improvement threshold of the elbow rule");
    cmd.option("epsilon", epsilon, "Also report the k=0 max-residual test at this tolerance (negative: off)");
    flags.add_to(cmd);
    cmd.path("out", out, "Output directory")->required();
  }

  int run() {
    cmd.resolve();
    auto manifest = start_manifest(cmd, "sweep", flags.config.seed);
    manifest.input_hashes["data"] = file_digest(data);
    const auto hash = manifest.content_hash();
    const auto t0 = std::chrono::steady_clock::now();

    const auto ds = load_traces(data, schema);
    SweepOptions options;
    options.k_max = kmax;
    options.seeds_per_k = seeds_per_k;
    options.tau = tau;
    options.test_fraction = flags.test_fraction;
    options.validation_fraction = flags.validation_fraction;
    options.threads = cmd.threads;
    auto outcome = sweep_k(ds, flags.architecture(ds.schema, 0), flags.config, options);
    manifest.stage_seconds["sweep"] = seconds_since(t0);

    const fs::path dir = out;
    for (std::size_t k = 0; k < outcome.models.size(); ++k) {
      const auto name = "model_k" + std::to_string(k) + ".json";
      auto doc = to_json(outcome.models[k]);
      doc["manifest_hash"] = hash;
      write_json(dir / name, doc);
      outcome.result.records[k].model = name;
      manifest.output_hashes[name] = file_digest(dir / name);
    }
    auto sweep_doc = to_json(outcome.result);
    sweep_doc["manifest_hash"] = hash;
    write_json(dir / "sweep.json", sweep_doc);
    detail::write_file(dir / "sse.svg", sse_plot_svg(outcome.result));
    manifest.output_hashes["sweep.json"] = file_digest(dir / "sweep.json");
    manifest.output_hashes["sse.svg"] = file_digest(dir / "sse.svg");
    write_json(dir / "manifest.json", to_json(manifest));

    for (const auto& r : outcome.result.records)
      std::cout << "k=" << r.k << "  test SSE " << r.test_sse << "  R^2 " << r.test_r2 << "\n";
    const auto detection = detect(outcome.result, epsilon >= 0.0 ? std::optional<double>(epsilon) : std::nullopt);
    std::cout << "k*=" << outcome.result.k_star << "  " << detection.describe() << "\n";
    return kOk;
  }
};

struct AnalyzeCommand {
  Command cmd;
  std::string model, out;
  std::uint64_t cap = 100;
  std::uint64_t budget = 100'000'000;
  bool brute_force = false;
  bool quiet = false;

  explicit AnalyzeCommand(CLI::App& app) : cmd(app, "analyze", "Count the secrets behind each interface valuation") {
    cmd.path("model", model, "Model JSON")->required();
    cmd.option("cap", cap, "Per-class count cap (>= 1)");
    cmd.option("budget", budget, "Search node budget");
    cmd.flag("brute-force", brute_force, "Enumerate the whole domain instead of branch-and-bound");
    cmd.flag("quiet", quiet, "No progress output");
    cmd.path("out", out, "Output census JSON")->required();
  }

  int run() {
    cmd.resolve();
    auto manifest = start_manifest(cmd, "analyze", 0);
    manifest.input_hashes["model"] = file_digest(model);
    const auto t0 = std::chrono::steady_clock::now();

    const auto net = load_network(model);
    const auto reducer = extract_reducer(net);
    const auto domain = SecretDomain::from_schema(net.schema);
    ClassCensus census;
    if (brute_force) {
      census = brute_force_census(reducer, domain, cap);
      census.exact_counts.reset();
    } else {
      BnbOptions options;
      options.cap = cap;
      options.budget = budget;
      options.threads = cmd.threads;
      if (!quiet) options.progress = [](std::uint64_t nodes) { std::cerr << "analyze: " << nodes << " nodes\n"; };
      census = bnb_census(reducer, domain, options);
    }
    census.model_hash = manifest.input_hashes["model"];
    manifest.stage_seconds["analyze"] = seconds_since(t0);

    auto doc = to_json(census);
    doc["manifest_hash"] = manifest.content_hash();
    write_json(out, doc);
    manifest.output_hashes["census"] = file_digest(out);
    write_json(sibling(out, ".manifest.json"), to_json(manifest));

    std::size_t feasible = 0;
    std::uint64_t total = 0;
    for (const auto& c : census.classes)
      if (c.status != ClassCensus::Status::kInfeasible) {
        ++feasible;
        total += c.count;
      }
    std::cout << "k=" << census.k << ": " << feasible << " feasible classes, " << total << " secrets counted"
              << (census.complete ? "" : " (node budget exhausted; census incomplete)") << ", " << census.nodes
              << " nodes\n";
    return kOk;
  }
};

struct ReportCommand {
  Command cmd;
  std::string census_path, sweep_path, out;

  explicit ReportCommand(CLI::App& app) : cmd(app, "report", "Shannon leak of a census") {
    cmd.path("census", census_path, "Census JSON")->required();
    cmd.path("sweep", sweep_path, "Sweep JSON, checked against the census width");
    cmd.path("out", out, "Output report JSON");
  }

  int run() {
    cmd.resolve();
    auto manifest = start_manifest(cmd, "report", 0);
    manifest.input_hashes["census"] = file_digest(census_path);
    const auto census = census_from_json(detail::read_json(census_path));
    std::optional<SweepResult> sweep;
    if (!sweep_path.empty()) {
      manifest.input_hashes["sweep"] = file_digest(sweep_path);
      sweep = sweep_from_json(detail::read_json(sweep_path));
    }
    auto report = build_report(census, sweep);
    // provenance refers to the artifact files as read
    report.census_hash = manifest.input_hashes["census"];
    if (sweep) report.sweep_hash = manifest.input_hashes["sweep"];
    if (!out.empty()) {
      auto doc = to_json(report);
      doc["manifest_hash"] = manifest.content_hash();
      write_json(out, doc);
      manifest.output_hashes["report"] = file_digest(out);
      write_json(sibling(out, ".manifest.json"), to_json(manifest));
    }
    std::cout << report.summary() << "\n";
    return kOk;
  }
};

template <typename F>
int guarded(int failure_code, F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
  }
  return failure_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Timing side-channel detection and quantification with tri-branch networks"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  GenCommand gen(app);
  TrainCommand train_cmd(app);
  SweepCommand sweep(app);
  AnalyzeCommand analyze(app);
  ReportCommand report(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  if (gen.cmd.app()->parsed()) return guarded(kGenFailed, [&] { return gen.run(); });
  if (train_cmd.cmd.app()->parsed()) return guarded(kTrainFailed, [&] { return train_cmd.run(); });
  if (sweep.cmd.app()->parsed()) return guarded(kTrainFailed, [&] { return sweep.run(); });
  if (analyze.cmd.app()->parsed()) return guarded(kAnalyzeFailed, [&] { return analyze.run(); });
  if (report.cmd.app()->parsed()) return guarded(kReportFailed, [&] { return report.run(); });
  return kUsage;
}
