#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "stnlab/arch.hpp"
#include "stnlab/datagen.hpp"
#include "stnlab/equi_audit.hpp"
#include "stnlab/error.hpp"
#include "stnlab/trainer.hpp"

namespace stnlab::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kSchemaVersion = 1;

struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error("usage", m) {}
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json read_json_file(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw ValidationError("cannot open config '" + p.string() + "'");
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ValidationError("config '" + p.string() + "' is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw FormatError("cannot write '" + p.string() + "'");
  f << text;
  if (!f) throw FormatError("write failed for '" + p.string() + "'");
}

fs::path run_dir(const std::string& out, const std::string& command, const std::string& spec,
                 std::uint64_t seed) {
  return fs::path(out) / command / spec / std::to_string(seed);
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first
/// failure after every worker finished.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(m);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

Variant variant_for(const ArchitectureSpec& spec, const std::string& flag) {
  if (!flag.empty()) {
    try {
      return parse_variant(flag);
    } catch (const ValueError& e) {
      throw UsageError(e.what());
    }
  }
  const auto slash = spec.name.find('/');
  const std::string family = spec.name.substr(0, slash);
  const auto dash = family.rfind('-');
  if (slash != std::string::npos && dash != std::string::npos) {
    const std::string tag = family.substr(dash + 1);
    if (tag == "r" || tag == "t" || tag == "s") return parse_variant(tag);
  }
  throw UsageError("cannot infer the dataset variant of spec '" + spec.name + "'; pass --variant");
}

std::vector<TrainStage> parse_stages(const std::string& text) {
  std::vector<TrainStage> stages;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    TrainStage st;
    try {
      std::size_t used = 0;
      const std::string it = item.substr(0, colon);
      st.iterations = std::stoul(it, &used);
      if (used != it.size()) throw std::invalid_argument(it);
      if (colon != std::string::npos) st.lr_factor = std::stod(item.substr(colon + 1));
    } catch (const std::exception&) {
      throw UsageError("bad stage '" + item + "' (expected ITERATIONS[:LR_FACTOR])");
    }
    stages.push_back(st);
  }
  if (stages.empty()) throw UsageError("empty stage list");
  return stages;
}

struct MnistData {
  LabeledImageSet train, test;
};

MnistData load_mnist(const std::string& dir) {
  const MnistFiles f = locate_mnist(dir);
  return {load_idx(f.train_images, f.train_labels), load_idx(f.test_images, f.test_labels)};
}

// ------------------------------------------------------------------ config

/// Splices "--key value" tokens from the command's section of a JSON config
/// in front of the user's own flags. A key already given on the command line
/// is skipped, so flags win.
std::vector<std::string> expand_config(const std::vector<std::string>& args, CLI::App& app) {
  if (args.empty()) return args;
  CLI::App* sub = nullptr;
  for (auto* s : app.get_subcommands({}))
    if (s->get_name() == args[0]) sub = s;
  if (sub == nullptr) return args;

  std::string config;
  std::set<std::string> given;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0) continue;
    const auto eq = a.find('=');
    const std::string name = a.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
    given.insert(name);
    if (name == "config") config = eq != std::string::npos ? a.substr(eq + 1) : (i + 1 < args.size() ? args[i + 1] : "");
  }
  if (config.empty()) return args;

  const json doc = read_json_file(config);
  if (!doc.is_object()) throw ValidationError("config must be a JSON object of command sections");
  for (const auto& [key, value] : doc.items()) {
    bool known = false;
    for (auto* s : app.get_subcommands({})) known |= s->get_name() == key;
    if (!known) throw ValidationError("unknown config key '" + key + "' (top-level keys are command names)");
    if (!value.is_object()) throw ValidationError("config section '" + key + "' must be an object");
  }
  if (!doc.contains(args[0])) return args;

  std::vector<std::string> tokens;
  for (const auto& [key, value] : doc.at(args[0]).items()) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    const CLI::Option* opt = sub->get_option_no_throw("--" + name);
    if (opt == nullptr || name == "config")
      throw ValidationError("unknown config key '" + args[0] + "." + key + "'");
    if (given.count(name)) continue;
    auto scalar = [&](const json& v) -> std::string {
      if (v.is_string()) return v.get<std::string>();
      if (v.is_number() || v.is_boolean()) return v.dump();
      throw ValidationError("config key '" + args[0] + "." + key + "' must be a scalar or a list of scalars");
    };
    if (value.is_boolean() && opt->get_expected_min() == 0) {
      if (value.get<bool>()) tokens.push_back("--" + name);
      continue;
    }
    std::string text;
    if (value.is_array()) {
      for (const auto& v : value) text += (text.empty() ? "" : ",") + scalar(v);
    } else {
      text = scalar(value);
    }
    tokens.push_back("--" + name);
    tokens.push_back(text);
  }
  std::vector<std::string> out{args[0]};
  out.insert(out.end(), tokens.begin(), tokens.end());
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

// ------------------------------------------------------------------ synth

struct SynthArgs {
  std::string variant;
  std::uint64_t seed = 0;
  std::size_t train_limit = 0, test_limit = 0;
};

void cmd_synth(const SynthArgs& a, const std::string& out_root, const std::string& data_dir, std::ostream& out) {
  Variant v;
  try {
    v = parse_variant(a.variant);
  } catch (const ValueError& e) {
    throw UsageError(e.what());
  }
  MnistData d = load_mnist(data_dir);
  const LabeledImageSet train_src = a.train_limit ? take(d.train, a.train_limit) : d.train;
  const LabeledImageSet test_src = a.test_limit ? take(d.test, a.test_limit) : d.test;
  const std::uint64_t train_seed = Rng::derive(a.seed, {1}), test_seed = Rng::derive(a.seed, {2});
  LabeledImageSet train = synthesize(v, train_src, train_seed);
  LabeledImageSet test = synthesize(v, test_src, test_seed);
  const Normalization norm = normalize(train);
  apply_normalization(test, norm);

  const fs::path dir = run_dir(out_root, "synth", std::string(variant_name(v)), a.seed);
  fs::create_directories(dir);
  save_cache(train, dir / "train.cache");
  save_cache(test, dir / "test.cache");
  json manifest = {{"schema_version", kSchemaVersion},
                   {"variant", std::string(variant_name(v))},
                   {"seed", a.seed},
                   {"train_images", train.size()},
                   {"test_images", test.size()},
                   {"height", train.height()},
                   {"width", train.width()},
                   {"normalization", {{"mean", norm.mean}, {"std", norm.std}}},
                   {"train_checksum", hex64(dataset_checksum(train))},
                   {"test_checksum", hex64(dataset_checksum(test))}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  out << json{{"variant", manifest["variant"]},
              {"seed", a.seed},
              {"train_checksum", manifest["train_checksum"]},
              {"test_checksum", manifest["test_checksum"]},
              {"dir", dir.string()}}
             .dump()
      << "\n";
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string spec;
  std::vector<std::uint64_t> seeds{0};
  std::size_t batch_size = 64;
  std::string stages = "3000:1,1000:0.1";
  double lr = 0;  // 0 selects the variant default
  double loc_mult = 1;
  double momentum = 0;
  bool nesterov = false;
  double l2 = 0;
  std::string variant;
  std::size_t train_subset = 10000;
  std::size_t log_every = 100;
  bool freeze_localization = false;
  bool long_schedule = false;
};

json config_json(const TrainConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages) stages.push_back({{"iterations", s.iterations}, {"lr_factor", s.lr_factor}});
  return {{"spec", c.spec.name},
          {"spec_hash", hex64(spec_hash(c.spec))},
          {"seed", c.seed},
          {"variant", std::string(variant_name(c.variant))},
          {"batch_size", c.batch_size},
          {"stages", stages},
          {"learning_rate", c.learning_rate},
          {"loc_multiplier", c.loc_multiplier},
          {"momentum", c.momentum},
          {"nesterov", c.nesterov},
          {"l2", c.l2},
          {"train_subset", c.train_subset},
          {"freeze_localization", c.freeze_localization}};
}

void cmd_train(const TrainArgs& a, const std::string& out_root, const std::string& data_dir, std::size_t jobs,
               std::ostream& out, std::ostream& err) {
  const ArchitectureSpec spec = resolve_spec(a.spec);
  validate_executable(spec);
  TrainConfig base;
  base.spec = spec;
  base.variant = variant_for(spec, a.variant);
  base.batch_size = a.long_schedule ? 256 : a.batch_size;
  base.stages = a.long_schedule ? std::vector<TrainStage>{{50000, 1.0}, {20000, 0.1}} : parse_stages(a.stages);
  base.learning_rate = a.lr > 0 ? a.lr : default_learning_rate(base.variant);
  base.loc_multiplier = a.loc_mult;
  base.momentum = a.momentum;
  base.nesterov = a.nesterov;
  base.l2 = a.l2;
  base.train_subset = a.train_subset;
  base.log_every = a.log_every;
  base.freeze_localization = a.freeze_localization;
  validate(base);

  const MnistData d = load_mnist(data_dir);
  std::mutex log_mutex;
  std::vector<json> results(a.seeds.size());
  parallel_for(a.seeds.size(), jobs, [&](std::size_t i) {
    TrainConfig cfg = base;
    cfg.seed = a.seeds[i];
    const fs::path dir = run_dir(out_root, "train", spec.name, cfg.seed);
    const TrainResult res = train(cfg, d.train, [&](const LogEntry& e) {
      std::lock_guard<std::mutex> lock(log_mutex);
      err << "train " << spec.name << " seed " << cfg.seed << " step " << e.step << " loss " << e.loss
          << " lr " << e.lr << "\n";
    });
    fs::create_directories(dir);
    checkpoint_save(*res.net, res.normalization, cfg.variant, dir / "checkpoint.stnc");
    std::string log = "schema_version,step,loss,lr\n";
    for (const auto& e : res.log)
      log += std::to_string(kSchemaVersion) + "," + std::to_string(e.step) + "," + num(e.loss) + "," + num(e.lr) + "\n";
    write_text(dir / "train_log.csv", log);
    json c = config_json(cfg);
    c["normalization"] = {{"mean", res.normalization.mean}, {"std", res.normalization.std}};
    write_text(dir / "config.json", c.dump(2) + "\n");
    results[i] = {{"spec", spec.name},
                  {"seed", cfg.seed},
                  {"checkpoint", (dir / "checkpoint.stnc").string()},
                  {"final_loss", res.log.empty() ? json(nullptr) : json(res.log.back().loss)}};
  });
  for (const auto& r : results) out << r.dump() << "\n";
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
  std::string spec;
  std::vector<std::uint64_t> seeds{0};
  std::string checkpoint;
  bool identity = false;
  std::size_t transforms = 0;  // 0 selects the variant default
  std::uint64_t eval_seed = kDefaultEvalSeed;
  std::size_t test_limit = 0;
  std::size_t train_subset = 10000;
  std::size_t batch_size = 250;
  std::string eval_set;
  bool save_eval_set = false;
};

std::size_t default_transforms(Variant v) { return v == Variant::S ? 2 : 10; }

json report_json(const EvalReport& r, const std::string& spec, Variant v, std::uint64_t seed) {
  json j = {{"schema_version", kSchemaVersion},
            {"spec", spec},
            {"variant", std::string(variant_name(v))},
            {"seed", seed},
            {"samples", r.samples},
            {"error_pct", r.error_pct},
            {"degenerate", r.degenerate}};
  if (r.pose) {
    json per = json::object();
    for (const auto& [label, value] : r.pose->per_label) per[std::to_string(label)] = value;
    j["pose_kind"] = std::string(pose_kind_name(r.pose->kind));
    j["pose_average"] = r.pose->average;
    j["pose_per_label"] = per;
    j["mean_det"] = r.mean_det;
  }
  if (r.heatmap_fit)
    j["heatmap_fit"] = {{"slope", r.heatmap_fit->vertical ? json(nullptr) : json(r.heatmap_fit->slope)},
                        {"intercept", r.heatmap_fit->intercept},
                        {"vertical", r.heatmap_fit->vertical}};
  return j;
}

void write_eval_outputs(const fs::path& dir, const EvalReport& r, const std::string& spec, Variant v,
                        std::uint64_t seed, json extra) {
  json rep = report_json(r, spec, v, seed);
  rep.update(extra);
  write_text(dir / "report.json", rep.dump(2) + "\n");
  const std::string sv = std::to_string(kSchemaVersion);
  const std::string key = spec + "," + std::string(variant_name(v)) + "," + std::to_string(seed);
  write_text(dir / "errors.csv", "schema_version,arch,variant,seed,error_pct\n" + sv + "," + key + "," + num(r.error_pct) + "\n");
  std::string pose = "schema_version,arch,variant,seed,kind,label,value\n";
  if (r.pose) {
    const std::string kind(pose_kind_name(r.pose->kind));
    for (const auto& [label, value] : r.pose->per_label)
      pose += sv + "," + key + "," + kind + "," + std::to_string(label) + "," + num(value) + "\n";
    pose += sv + "," + key + "," + kind + ",average," + num(r.pose->average) + "\n";
  }
  write_text(dir / "pose_summary.csv", pose);
  std::string heat = "schema_version,theta,comp\n";
  for (const auto& p : r.heatmap) heat += sv + "," + num(p[0]) + "," + num(p[1]) + "\n";
  write_text(dir / "heatmap.csv", heat);
}

void cmd_eval(const EvalArgs& a, const std::string& out_root, const std::string& data_dir, std::size_t jobs,
              std::ostream& out) {
  if (a.identity && !a.checkpoint.empty()) throw UsageError("--identity and --checkpoint are exclusive");
  if (a.checkpoint.empty() && a.spec.empty()) throw UsageError("eval needs --spec or --checkpoint");
  if (!a.checkpoint.empty() && a.seeds.size() != 1) throw UsageError("--checkpoint evaluates a single seed");
  const bool need_train = a.identity;
  const bool need_test = a.eval_set.empty();
  MnistData d;
  if (need_train || need_test) d = load_mnist(data_dir);
  if (a.test_limit && need_test) d.test = take(d.test, a.test_limit);

  std::vector<json> results(a.seeds.size());
  parallel_for(a.seeds.size(), jobs, [&](std::size_t i) {
    const std::uint64_t seed = a.seeds[i];
    std::unique_ptr<Network<float>> net;
    Normalization norm;
    Variant v;
    json extra = json::object();
    if (a.identity) {
      const ArchitectureSpec spec = resolve_spec(a.spec);
      validate_executable(spec);
      v = variant_for(spec, "");
      net = std::make_unique<Network<float>>(spec, seed);
      norm = training_normalization(take(d.train, a.train_subset), v, seed);
      extra["source"] = "identity";
    } else {
      std::optional<ArchitectureSpec> expected;
      if (!a.spec.empty()) expected = resolve_spec(a.spec);
      const fs::path ckpt = a.checkpoint.empty()
                                ? run_dir(out_root, "train", expected->name, seed) / "checkpoint.stnc"
                                : fs::path(a.checkpoint);
      Checkpoint c = checkpoint_load(ckpt, expected ? &*expected : nullptr);
      net = std::move(c.net);
      norm = c.normalization;
      v = c.variant;
      extra["source"] = ckpt.string();
    }
    const std::string spec_name = net->spec().name;
    const fs::path dir = run_dir(out_root, "eval", spec_name, seed);
    LabeledImageSet set;
    if (!a.eval_set.empty()) {
      set = load_cache(a.eval_set);
      if (set.variant != v)
        throw ValidationError("eval set variant " + std::string(variant_name(set.variant)) +
                              " does not match the network's " + std::string(variant_name(v)));
      apply_normalization(set, norm);
      extra["eval_set"] = a.eval_set;
    } else {
      const std::size_t transforms = a.transforms ? a.transforms : default_transforms(v);
      set = make_eval_set(d.test, v, a.eval_seed, transforms, norm);
      extra["eval_seed"] = a.eval_seed;
      extra["transforms"] = transforms;
    }
    if (a.save_eval_set) save_cache(set, dir / "eval_set.cache");
    const EvalReport r = evaluate(*net, set, a.batch_size);
    write_eval_outputs(dir, r, spec_name, v, seed, extra);
    json line = {{"spec", spec_name}, {"seed", seed}, {"error_pct", r.error_pct}, {"dir", dir.string()}};
    if (r.pose) line["pose_average"] = r.pose->average;
    results[i] = line;
  });
  for (const auto& r : results) out << r.dump() << "\n";
}

// ------------------------------------------------------------------ params

void cmd_params(const std::vector<std::string>& specs, bool all, bool as_json, std::ostream& out) {
  std::vector<std::string> names = specs;
  if (all) names = builtin_spec_names();
  if (names.empty()) throw UsageError("params needs a spec name (or --all)");
  json j = json::object();
  for (const auto& n : names) {
    const ArchitectureSpec s = resolve_spec(n);
    const std::size_t count = count_params(s);
    j[s.name] = count;
    if (!as_json) out << (names.size() == 1 ? "" : s.name + " ") << count << "\n";
  }
  if (as_json) out << j.dump() << "\n";
}

// ------------------------------------------------------------------ audit

struct AuditArgs {
  std::string group = "translation";
  double deg = 0;
  long dx = 0, dy = 0;
  double scale = 1;
  std::string extractor = "random";
  std::vector<std::uint64_t> seeds{0};
  std::size_t count = 0;
  std::size_t image_size = 48;
  std::string image;
  std::vector<double> sigmas{1.0, 2.0};
  std::size_t channels = 4;
  std::size_t kernel = 0;
  double blob_sigma = 12;
};

void cmd_audit(const AuditArgs& a, const std::string& out_root, std::size_t jobs, std::ostream& out) {
  GroupKind kind;
  try {
    kind = parse_group_kind(a.group);
  } catch (const ValueError& e) {
    throw UsageError(e.what());
  }
  TransformGroupElement h;
  switch (kind) {
    case GroupKind::TranslationInt: h = TransformGroupElement::translation(a.dx, a.dy); break;
    case GroupKind::Rotation: h = TransformGroupElement::rotation(a.deg); break;
    case GroupKind::UniformScale: h = TransformGroupElement::uniform_scale(a.scale); break;
    case GroupKind::GeneralAffine: throw UsageError("the affine group is only available through the library");
  }
  if (a.extractor != "random" && a.extractor != "mirrored-pair" && a.extractor != "isotropic")
    throw UsageError("unknown extractor '" + a.extractor + "' (random, mirrored-pair, isotropic)");
  std::string image_kind = a.image.empty() ? (a.extractor == "isotropic" ? "blob" : "integer") : a.image;
  if (image_kind != "blob" && image_kind != "integer") throw UsageError("unknown image '" + image_kind + "' (blob, integer)");

  std::vector<std::uint64_t> seeds = a.seeds;
  if (a.count) {
    seeds.resize(a.count);
    for (std::size_t i = 0; i < a.count; ++i) seeds[i] = i;
  }
  std::vector<json> rows(seeds.size());
  parallel_for(seeds.size(), jobs, [&](std::size_t i) {
    const std::uint64_t seed = seeds[i];
    FeatureExtractor ex;
    if (a.extractor == "random")
      ex = random_extractor(seed, a.channels, a.kernel ? a.kernel : 3);
    else if (a.extractor == "mirrored-pair")
      ex = mirrored_pair_extractor(a.kernel ? a.kernel : 5, seed);
    else
      ex = isotropic_extractor(a.sigmas, a.kernel);
    const Tensor<double> img = image_kind == "blob" ? blob_image(seed, a.image_size, a.image_size, 12, a.blob_sigma)
                                                    : random_integer_image(seed, a.image_size, a.image_size);
    const AuditReport r = alignment_residual(ex, img, h);
    const double overlap = receptive_field_overlap(h, static_cast<double>(ex.receptive_field().support));
    const std::string sv = std::to_string(kSchemaVersion);
    write_text(run_dir(out_root, "audit", a.extractor, seed) / "audit.csv",
               "schema_version,group_kind,magnitude,extractor_seed,residual_same,residual_perm,overlap,interior,margin\n" +
                   sv + "," + std::string(group_kind_name(kind)) + "," + num(h.magnitude()) + "," +
                   std::to_string(seed) + "," + num(r.residual_same) + "," + num(r.residual_perm) + "," +
                   num(overlap) + "," + std::to_string(r.interior) + "," + num(r.nominal_margin) + "\n");
    rows[i] = {{"group_kind", std::string(group_kind_name(kind))},
               {"magnitude", h.magnitude()},
               {"extractor_seed", seed},
               {"residual_same", r.residual_same},
               {"residual_perm", r.residual_perm},
               {"permutation", r.permutation},
               {"overlap", overlap},
               {"interior", r.interior},
               {"margin", r.nominal_margin}};
  });
  double lo = rows.front()["residual_perm"], hi = lo;
  for (const auto& r : rows) {
    lo = std::min<double>(lo, r["residual_perm"]);
    hi = std::max<double>(hi, r["residual_perm"]);
  }
  out << json{{"extractor", a.extractor}, {"rows", rows}, {"min_residual_perm", lo}, {"max_residual_perm", hi}}.dump()
      << "\n";
}

// ------------------------------------------------------------------ pose-report

double population_std(const std::vector<double>& v) {
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

void cmd_pose_report(const std::string& in_root, const std::string& out_root, std::ostream& out) {
  const fs::path eval_dir = fs::path(in_root) / "eval";
  if (!fs::is_directory(eval_dir)) throw ValidationError("no eval outputs under '" + eval_dir.string() + "'");
  struct Run {
    std::uint64_t seed;
    double error;
    std::optional<double> pose;
    std::string kind;
    fs::path dir;
  };
  std::map<std::pair<std::string, std::string>, std::vector<Run>> groups;
  std::vector<fs::path> reports;
  for (const auto& e : fs::recursive_directory_iterator(eval_dir))
    if (e.is_regular_file() && e.path().filename() == "report.json") reports.push_back(e.path());
  std::sort(reports.begin(), reports.end());
  for (const auto& p : reports) {
    const json j = read_json_file(p);
    Run r{j.at("seed").get<std::uint64_t>(), j.at("error_pct").get<double>(), std::nullopt, "", p.parent_path()};
    if (j.contains("pose_average")) {
      r.pose = j["pose_average"].get<double>();
      r.kind = j["pose_kind"].get<std::string>();
    }
    groups[{j.at("spec").get<std::string>(), j.at("variant").get<std::string>()}].push_back(r);
  }
  if (groups.empty()) throw ValidationError("no report.json files under '" + eval_dir.string() + "'");

  const fs::path dir = fs::path(out_root) / "pose-report";
  const std::string sv = std::to_string(kSchemaVersion);
  std::string errors = "schema_version,arch,variant,seeds,mean_error_pct,std_error_pct\n";
  std::string poses = "schema_version,arch,variant,kind,seeds,mean_pose_std,std_pose_std,median_seed\n";
  json summary = json::array();
  for (auto& [key, runs] : groups) {
    std::sort(runs.begin(), runs.end(), [](const Run& x, const Run& y) { return x.seed < y.seed; });
    std::vector<double> err_v;
    for (const auto& r : runs) err_v.push_back(r.error);
    errors += sv + "," + key.first + "," + key.second + "," + std::to_string(runs.size()) + "," +
              num(mean_of(err_v)) + "," + num(population_std(err_v)) + "\n";
    json g = {{"arch", key.first}, {"variant", key.second}, {"seeds", runs.size()}, {"mean_error_pct", mean_of(err_v)}};
    const bool has_pose = std::all_of(runs.begin(), runs.end(), [](const Run& r) { return r.pose.has_value(); });
    if (has_pose) {
      std::vector<double> pose_v;
      for (const auto& r : runs) pose_v.push_back(*r.pose);
      const Run& median = runs[median_model_index(pose_v)];
      poses += sv + "," + key.first + "," + key.second + "," + runs.front().kind + "," + std::to_string(runs.size()) +
               "," + num(mean_of(pose_v)) + "," + num(population_std(pose_v)) + "," + std::to_string(median.seed) + "\n";
      std::ifstream src(median.dir / "heatmap.csv");
      if (src) {
        std::stringstream ss;
        ss << src.rdbuf();
        write_text(dir / key.first / "heatmap_median.csv", ss.str());
      }
      g["mean_pose_std"] = mean_of(pose_v);
      g["median_seed"] = median.seed;
    }
    summary.push_back(g);
  }
  write_text(dir / "table_errors.csv", errors);
  write_text(dir / "table_pose.csv", poses);
  out << json{{"groups", summary}, {"dir", dir.string()}}.dump() << "\n";
}

void emit_error(std::ostream& err, const std::string& kind, const std::string& message, json extra = json::object()) {
  json j = {{"error", kind}, {"message", message}};
  j.update(extra);
  err << j.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatial transformer experiments: data synthesis, training, evaluation and audits", "stnlab"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  std::string out_root = "runs", data_dir, config;
  std::size_t jobs = 1;
  auto common = [&](CLI::App* s, bool data, bool parallel) {
    s->add_option("--out", out_root, "Output root directory");
    s->add_option("--config", config, "JSON config with a section per command; flags win");
    if (data) s->add_option("--data-dir", data_dir, "Directory with the MNIST IDX files (else $STN_LAB_DATA_DIR)");
    if (parallel) s->add_option("--jobs", jobs, "Seeds processed in parallel")->check(CLI::PositiveNumber);
  };

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Synthesize a perturbed train/test cache");
  synth->add_option("--variant", sa.variant, "R, T or S")->required();
  synth->add_option("--seed", sa.seed);
  synth->add_option("--train-limit", sa.train_limit, "Use only the first N training images (0 = all)");
  synth->add_option("--test-limit", sa.test_limit, "Use only the first N test images (0 = all)");
  common(synth, true, false);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train one network per seed");
  tr->add_option("--spec", ta.spec, "Catalog name (see `params --all`) or a JSON spec file")->required();
  tr->add_option("--seeds,--seed", ta.seeds)->delimiter(',');
  tr->add_option("--batch-size", ta.batch_size);
  tr->add_option("--stages", ta.stages, "ITERATIONS:LR_FACTOR list");
  tr->add_option("--lr", ta.lr, "Base learning rate (0 = 0.01 on T, 0.02 otherwise)");
  tr->add_option("--loc-mult", ta.loc_mult, "Learning-rate multiplier of non-shared localization layers");
  tr->add_option("--momentum", ta.momentum);
  tr->add_flag("--nesterov", ta.nesterov);
  tr->add_option("--l2", ta.l2);
  tr->add_option("--variant", ta.variant, "Dataset variant (default: from the spec name)");
  tr->add_option("--train-subset", ta.train_subset);
  tr->add_option("--log-every", ta.log_every);
  tr->add_flag("--freeze-localization", ta.freeze_localization);
  tr->add_flag("--long-schedule", ta.long_schedule, "Batch 256, 50000 + 20000 iterations");
  common(tr, true, true);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate trained networks on a seeded perturbed test set");
  ev->add_option("--spec", ea.spec);
  ev->add_option("--seeds,--seed", ea.seeds)->delimiter(',');
  ev->add_option("--checkpoint", ea.checkpoint, "Checkpoint file (default: the train output of spec/seed)");
  ev->add_flag("--identity", ea.identity, "Evaluate the untrained network (identity transformers)");
  ev->add_option("--transforms", ea.transforms, "Perturbations per test image (0 = 10, or 2 on S)");
  ev->add_option("--eval-seed", ea.eval_seed);
  ev->add_option("--test-limit", ea.test_limit);
  ev->add_option("--train-subset", ea.train_subset, "Images for the --identity normalization pass");
  ev->add_option("--batch-size", ea.batch_size);
  ev->add_option("--eval-set", ea.eval_set, "Use a saved eval set cache instead of synthesizing one");
  ev->add_flag("--save-eval-set", ea.save_eval_set, "Also write eval_set.cache");
  common(ev, true, true);

  std::vector<std::string> param_specs;
  bool params_all = false, params_json = false;
  auto* pa = app.add_subcommand("params", "Count learnable parameters");
  pa->add_option("specs", param_specs, "Catalog names or JSON spec files");
  pa->add_flag("--all", params_all, "Every catalog entry");
  pa->add_flag("--json", params_json);
  pa->add_option("--config", config);

  AuditArgs aa;
  auto* au = app.add_subcommand("audit", "Feature-map alignment residuals");
  au->add_option("--group", aa.group, "translation, rotation or scale");
  au->add_option("--deg", aa.deg);
  au->add_option("--dx", aa.dx);
  au->add_option("--dy", aa.dy);
  au->add_option("--scale", aa.scale);
  au->add_option("--extractor", aa.extractor, "random, mirrored-pair or isotropic");
  au->add_option("--seeds,--seed", aa.seeds)->delimiter(',');
  au->add_option("--count", aa.count, "Use seeds 0..N-1");
  au->add_option("--image-size", aa.image_size);
  au->add_option("--image", aa.image, "integer or blob (default: blob for isotropic)");
  au->add_option("--sigmas", aa.sigmas)->delimiter(',');
  au->add_option("--channels", aa.channels);
  au->add_option("--kernel", aa.kernel, "Filter size (0 = extractor default)");
  au->add_option("--blob-sigma", aa.blob_sigma);
  common(au, false, true);

  std::string report_in;
  auto* pr = app.add_subcommand("pose-report", "Aggregate eval outputs into seed tables and median heatmaps");
  pr->add_option("--in", report_in, "Root holding eval/ (default: --out)");
  common(pr, false, false);

  try {
    std::vector<std::string> args = expand_config(raw_args, app);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    emit_error(err, "usage", e.what());
    return 2;
  } catch (const Error& e) {
    emit_error(err, e.kind(), e.what());
    return 2;
  }

  try {
    if (*synth) cmd_synth(sa, out_root, data_dir, out);
    if (*tr) cmd_train(ta, out_root, data_dir, jobs, out, err);
    if (*ev) cmd_eval(ea, out_root, data_dir, jobs, out);
    if (*pa) cmd_params(param_specs, params_all, params_json, out);
    if (*au) cmd_audit(aa, out_root, jobs, out);
    if (*pr) cmd_pose_report(report_in.empty() ? out_root : report_in, out_root, out);
  } catch (const UsageError& e) {
    emit_error(err, "usage", e.what());
    return 2;
  } catch (const DivergenceError& e) {
    emit_error(err, e.kind(), e.what(), {{"step", e.step()}});
    return 1;
  } catch (const Error& e) {
    emit_error(err, e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    emit_error(err, "internal", e.what());
    return 1;
  }
  return 0;
}

}  // namespace stnlab::cli
