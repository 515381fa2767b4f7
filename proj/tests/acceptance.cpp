// Acceptance harness: one PASS/FAIL line per criterion, details indented
// below it. Pass criterion numbers as arguments to run a subset. The report
// is also written to acceptance_report.txt in the working directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "stnlab/affine_pose.hpp"
#include "stnlab/arch.hpp"
#include "stnlab/equi_audit.hpp"
#include "stnlab/error.hpp"
#include "stnlab/network.hpp"
#include "stnlab/trainer.hpp"
#include "support/grad_suite.hpp"
#include "support/oracles.hpp"

using namespace stnlab;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTol = testing::kGradRelTol;  // 1e-5 relative
constexpr std::uint64_t kGradSeeds = 5;
constexpr double kGradBudget = 60;
constexpr std::size_t kFitMatrices = 1000;
constexpr double kFitTol = 1e-6;
constexpr double kFitBudget = 60;
constexpr std::uint64_t kAuditSeeds = 20;
constexpr double kSameChannelFloor = 0.1;
constexpr double kIsotropicTol = 5e-3;
constexpr double kOverlapTol = 1e-9;
constexpr double kAuditBudget = 300;
constexpr double kUniformSpread = 51.96152422706632;  // 180 / sqrt(12)
constexpr double kIdentitySpreadTol = 2.0;
constexpr std::size_t kDeskSeeds = 3;
constexpr double kDeskBudget = 7200;
constexpr double kCompositionTol = 1e-12;
constexpr double kNormTol = 1e-5;

struct Outcome {
  bool pass = true;
  std::vector<std::string> lines;

  void check(bool ok, const std::string& what) {
    lines.push_back(std::string(ok ? "ok    " : "FAIL  ") + what);
    pass = pass && ok;
  }
  void note(const std::string& what) { lines.push_back("      " + what); }
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::string fmt(const char* f, double a, double b, double c) {
  char buf[200];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const MnistFiles& files() {
  static const MnistFiles f = locate_mnist();
  return f;
}

const LabeledImageSet& train_images() {
  static const LabeledImageSet s = load_idx(files().train_images, files().train_labels);
  return s;
}

const LabeledImageSet& test_images() {
  static const LabeledImageSet s = load_idx(files().test_images, files().test_labels);
  return s;
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("stnlab_acceptance_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

// ---------------------------------------------------------------- criteria

Outcome gradients() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& c : testing::gradient_suite()) {
    double worst = 0;
    std::size_t checked = 0, failures = 0;
    for (std::uint64_t seed = 1; seed <= kGradSeeds; ++seed) {
      const testing::GradCheck r = c.run(seed);
      worst = std::max(worst, r.max_rel);
      checked += r.checked;
      failures += r.failures;
    }
    o.check(failures == 0 && checked > 0,
            c.name + ": " + std::to_string(checked) + " entries over " + std::to_string(kGradSeeds) +
                " seeds, max rel err " + fmt("%.2e", worst) + fmt(" (tol %.0e)", kGradTol));
  }
  const double t = seconds_since(t0);
  o.check(t < kGradBudget, fmt("runtime %.1f s (budget %.0f s)", t, kGradBudget));
  return o;
}

Outcome parameter_counts() {
  Outcome o;
  const std::vector<std::pair<std::string, std::size_t>> expected = {
      {"mnist-r/cnn", 54122},     {"mnist-r/stn-c0", 53744},  {"mnist-r/stn-c1", 53984},
      {"mnist-r/stn-dl1", 55296}, {"mnist-r/stn-sl1", 53984}, {"mnist-t/cnn", 66692},
      {"mnist-t/stn-c0", 67138},  {"mnist-t/stn-c1", 67088},  {"mnist-t/stn-dl1", 66800},
      {"mnist-t/stn-sl1", 65488}, {"mnist-s/cnn", 136674},    {"mnist-s/stn-c0", 136448},
      {"mnist-s/stn-c1", 137072}, {"mnist-s/stn-dl1", 138384}, {"mnist-s/stn-sl1", 137072}};
  for (const auto& [name, want] : expected) {
    const std::size_t got = count_params(builtin_spec(name));
    o.check(got == want, name + ": " + std::to_string(got) + " (expected " + std::to_string(want) + ")");
  }
  return o;
}

Outcome similarity_fit() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const testing::SimilarityGrid grid(0.01, 0.001);
  Rng rng(2024);
  double worst = -INFINITY;
  std::size_t beaten = 0;
  for (std::size_t i = 0; i < kFitMatrices; ++i) {
    AffineTransform a{{rng.uniform(-2, 2), rng.uniform(-2, 2), 0, rng.uniform(-2, 2), rng.uniform(-2, 2), 0}};
    if (a.det() <= 0) std::swap(a.m[0], a.m[1]), std::swap(a.m[3], a.m[4]);
    if (a.det() <= 0) continue;
    const SimilarityFit f = fit_similarity(a);
    const double gap = testing::similarity_error(a, f.scale, f.degrees) - grid.best_error(a);
    worst = std::max(worst, gap);
    if (gap <= kFitTol) ++beaten;
  }
  o.check(beaten == kFitMatrices, std::to_string(beaten) + "/" + std::to_string(kFitMatrices) +
                                      " matrices: closed form <= grid + " + fmt("%.0e", kFitTol) +
                                      fmt(" (worst gap %.3e)", worst));
  const SimilarityFit shear = fit_similarity(AffineTransform{{1, 0.5, 0, 0, 1, 0}});
  o.check(std::abs(shear.degrees - (-14.036)) < 1e-3 && std::abs(shear.scale - 1.0308) < 1e-4,
          fmt("shear [[1,0.5],[0,1]]: phi %.6f deg, S %.6f", shear.degrees, shear.scale));
  const double t = seconds_since(t0);
  o.check(t < kFitBudget, fmt("runtime %.1f s (budget %.0f s)", t, kFitBudget));
  return o;
}

Outcome equivariance_audit() {
  using TG = TransformGroupElement;
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();

  // (a) integer translations by multiples of the pooling stride
  double worst = 0;
  std::size_t min_interior = SIZE_MAX;
  for (std::uint64_t seed = 0; seed < kAuditSeeds; ++seed) {
    const auto ex = random_extractor(seed);
    const auto img = random_integer_image(seed, 48, 48);
    for (auto [dx, dy] : {std::pair<long, long>{4, -6}, {-2, 2}, {0, 8}}) {
      const AuditReport r = alignment_residual(ex, img, TG::translation(dx, dy));
      worst = std::max({worst, r.residual_same, r.residual_perm});
      min_interior = std::min(min_interior, r.interior);
    }
  }
  o.check(worst == 0.0 && min_interior > 0,
          fmt("(a) translation residual max %.3g over 20 extractors x 3 stride-multiple shifts", worst) +
              ", min interior " + std::to_string(min_interior));

  // (b) mirrored pair under a half turn
  double perm_worst = 0, same_min = INFINITY;
  bool swapped = true;
  for (std::uint64_t seed = 0; seed < kAuditSeeds; ++seed) {
    const auto ex = mirrored_pair_extractor(5, seed + 1);
    const AuditReport r = alignment_residual(ex, random_integer_image(seed, 40, 40), TG::rotation(180));
    perm_worst = std::max(perm_worst, r.residual_perm);
    same_min = std::min(same_min, r.residual_same);
    swapped = swapped && r.permutation == std::vector<std::size_t>{1, 0};
  }
  o.check(perm_worst == 0.0 && swapped, fmt("(b) swapped-channel residual max %.3g at 180 deg", perm_worst));
  o.check(same_min > kSameChannelFloor,
          fmt("(b) same-channel residual min %.4f (floor %.1f)", same_min, kSameChannelFloor));

  // (c) isotropic filters
  const auto iso = isotropic_extractor({1.0, 2.0});
  double iso33 = 0, iso90 = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto img = blob_image(seed, 64, 64, 12, 12.0);
    iso33 = std::max(iso33, alignment_residual(iso, img, TG::rotation(33)).residual_same);
    iso90 = std::max(iso90, alignment_residual(iso, img, TG::rotation(90)).residual_same);
  }
  o.check(iso33 < kIsotropicTol, fmt("(c) isotropic rotation 33 deg residual max %.3e (tol %.0e)", iso33, kIsotropicTol));
  o.check(iso90 < kIsotropicTol, fmt("(c) isotropic rotation 90 deg residual max %.3e", iso90));

  // (d) non-translation groups leave a residual for every seed
  double rot_min = INFINITY, scale_min = INFINITY;
  for (std::uint64_t seed = 0; seed < kAuditSeeds; ++seed) {
    const auto ex = random_extractor(seed);
    const auto img = random_integer_image(seed, 48, 48);
    rot_min = std::min(rot_min, alignment_residual(ex, img, TG::rotation(45)).residual_perm);
    scale_min = std::min(scale_min, alignment_residual(ex, img, TG::uniform_scale(2)).residual_perm);
  }
  o.check(rot_min > 0, fmt("(d) rotation 45 deg best-permutation residual min %.4f (margin above 0)", rot_min));
  o.check(scale_min > 0, fmt("(d) scale 2 best-permutation residual min %.4f (margin above 0)", scale_min));

  // (e) receptive field overlap
  const double ov_scale = receptive_field_overlap(TG::uniform_scale(2), 8);
  const double ov_rot = receptive_field_overlap(TG::rotation(45), 8);
  const double want_rot = 2 * (std::numbers::sqrt2 - 1);
  o.check(ov_scale == 0.25, fmt("(e) scale 2 overlap %.17g (expected 0.25 exactly)", ov_scale));
  o.check(std::abs(ov_rot - want_rot) < kOverlapTol,
          fmt("(e) 45 deg overlap %.17g, |diff| %.2e", ov_rot, std::abs(ov_rot - want_rot)));

  const double t = seconds_since(t0);
  o.check(t < kAuditBudget, fmt("runtime %.1f s (budget %.0f s)", t, kAuditBudget));
  return o;
}

struct DeskRun {
  double error_pct = 0;
  double pose = 0;
};

DeskRun desk_run(const std::string& spec, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.spec = builtin_spec(spec);
  cfg.seed = seed;
  cfg.variant = Variant::R;
  cfg.learning_rate = default_learning_rate(Variant::R);
  cfg.log_every = 1000;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(cfg, train_images(), [&](const LogEntry& e) {
    std::cerr << "  " << spec << " seed " << seed << " step " << e.step << " loss " << e.loss << "\n";
  });
  const LabeledImageSet eval = make_eval_set(test_images(), Variant::R, kDefaultEvalSeed, 10, r.normalization);
  const EvalReport rep = evaluate(*r.net, eval);
  std::cerr << "  " << spec << " seed " << seed << fmt(" done in %.0f s", seconds_since(t0)) << "\n";
  return {rep.error_pct, rep.pose ? rep.pose->average : NAN};
}

Outcome desk_reproduction() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t pose_wins = 0, error_wins = 0;
  for (std::uint64_t seed = 1; seed <= kDeskSeeds; ++seed) {
    const DeskRun cnn = desk_run("mnist-r/cnn", seed);
    const DeskRun c1 = desk_run("mnist-r/stn-c1", seed);
    const DeskRun sl1 = desk_run("mnist-r/stn-sl1", seed);
    if (sl1.pose < c1.pose) ++pose_wins;
    if (c1.error_pct < cnn.error_pct && sl1.error_pct < cnn.error_pct) ++error_wins;
    o.note("seed " + std::to_string(seed) + fmt(": error cnn %.2f%%, stn-c1 %.2f%%", cnn.error_pct, c1.error_pct) +
           fmt(", stn-sl1 %.2f%%", sl1.error_pct) + fmt("; pose std stn-c1 %.2f, stn-sl1 %.2f deg", c1.pose, sl1.pose));
  }
  o.check(pose_wins >= 2, "(i) stn-sl1 pose std below stn-c1 in " + std::to_string(pose_wins) + "/3 seeds");
  o.check(error_wins >= 2, "(ii) both transformers below the cnn error in " + std::to_string(error_wins) + "/3 seeds");

  // An untrained input transformer predicts the identity for every sample.
  const Network<float> frozen(builtin_spec("mnist-r/stn-c0"), 1);
  const Normalization norm = training_normalization(train_images(), Variant::R, 1);
  const EvalReport id = evaluate(frozen, make_eval_set(test_images(), Variant::R, kDefaultEvalSeed, 10, norm));
  const double spread = id.pose ? id.pose->average : NAN;
  o.check(std::abs(spread - kUniformSpread) <= kIdentitySpreadTol,
          fmt("(iii) identity transformer pose std %.3f deg vs %.3f (tol %.0f)", spread, kUniformSpread,
              kIdentitySpreadTol));
  const double t = seconds_since(t0);
  o.check(t <= kDeskBudget, fmt("runtime %.0f s (budget %.0f s)", t, kDeskBudget));
  return o;
}

Outcome iterative_composition() {
  Outcome o;
  Network<double> net(builtin_spec("desk-r/stn-c0-iter2"), 5);
  Rng rng(8);
  const std::size_t n = 3;
  auto x = testing::random_tensor({n, 1, 28, 28}, rng, 0, 1);
  std::vector<std::vector<double>> stub(2, std::vector<double>(6 * n));
  for (auto& s : stub)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 6; ++j) s[i * 6 + j] = (j == 0 || j == 4 ? 1.0 : 0.0) + rng.uniform(-0.3, 0.3);
  ForwardOptions opt;
  opt.loc_override = [&](std::size_t, std::size_t it, std::size_t, std::vector<double>& theta) {
    theta = stub.at(it);
    return true;
  };
  Graph<double> g;
  const ForwardResult r = net.forward(g, g.input(x), opt);
  double mat_err = 0, warp_err = 0;
  for (std::size_t i = 0; i < n; ++i) {
    AffineTransform a, b, got;
    for (std::size_t j = 0; j < 6; ++j) {
      a.m[j] = stub[0][i * 6 + j];
      b.m[j] = stub[1][i * 6 + j];
      got.m[j] = g.value(r.theta[0])[i * 6 + j];
    }
    // Independent homogeneous product of the two 3x3 matrices.
    const double A[3][3] = {{a.m[0], a.m[1], a.m[2]}, {a.m[3], a.m[4], a.m[5]}, {0, 0, 1}};
    const double B[3][3] = {{b.m[0], b.m[1], b.m[2]}, {b.m[3], b.m[4], b.m[5]}, {0, 0, 1}};
    AffineTransform ref;
    for (int row = 0; row < 2; ++row)
      for (int col = 0; col < 3; ++col)
        ref.m[row * 3 + col] = A[row][0] * B[0][col] + A[row][1] * B[1][col] + A[row][2] * B[2][col];
    for (std::size_t j = 0; j < 6; ++j) mat_err = std::max(mat_err, std::abs(got.m[j] - ref.m[j]));
    const Tensor<double> plane({1, 28, 28}, std::vector<double>(x.data() + i * 784, x.data() + (i + 1) * 784));
    const auto direct = bilinear_sample(plane, affine_grid(ref, 28, 28), BoundaryPolicy::ClampNearest);
    for (std::size_t k = 0; k < 784; ++k)
      warp_err = std::max(warp_err, std::abs(g.value(r.warped[0])[i * 784 + k] - direct[k]));
  }
  o.check(mat_err <= kCompositionTol, fmt("two-iteration matrix vs product oracle: max |diff| %.2e", mat_err));
  o.check(warp_err <= kCompositionTol, fmt("warp vs single resampling with the product: max |diff| %.2e", warp_err));

  Network<float> iter(builtin_spec("desk-r/stn-c0-iter2"), 9);
  Network<float> plain(builtin_spec("desk-r/stn-c0"), 1);
  Rng wr(2);
  for (float& v : iter.tensor("st0.out.weight").values()) v = static_cast<float>(wr.uniform(-0.01, 0.01));
  plain.copy_values_from(iter);
  Tensor<float> xf({8, 1, 28, 28});
  for (float& v : xf.values()) v = static_cast<float>(wr.uniform());
  ForwardOptions one;
  one.iterations = 1;
  const auto p1 = iter.predict(xf, one), pp = plain.predict(xf);
  o.check(p1.logits == pp.logits && p1.theta[0] == pp.theta[0], "n_iters=1 logits and matrices equal the plain network bit for bit");
  return o;
}

Outcome data_pipeline() {
  Outcome o;
  const LabeledImageSet src = take(train_images(), 1000);
  for (Variant v : {Variant::R, Variant::T, Variant::S}) {
    const std::uint64_t a = dataset_checksum(synthesize(v, src, 11));
    const std::uint64_t b = dataset_checksum(synthesize(v, src, 11));
    const std::uint64_t c = dataset_checksum(synthesize(v, src, 12));
    o.check(a == b && a != c, "synth " + std::string(variant_name(v)) + ": checksum " + hex64(a) +
                                  " repeats, other seed differs");
  }
  for (Variant v : {Variant::R, Variant::T, Variant::S}) {
    LabeledImageSet set = synthesize(v, src, 3);
    normalize(set);
    const Normalization after = compute_normalization(set);
    o.check(std::abs(after.mean) <= kNormTol && std::abs(after.std - 1) <= kNormTol,
            "normalized " + std::string(variant_name(v)) + fmt(": mean %.2e, std - 1 = %.2e", after.mean, after.std - 1));
  }
  const LabeledImageSet t = synthesize(Variant::T, take(train_images(), 4000), 5);
  std::size_t six = 0;
  for (const auto& c : t.clutter) six += c.size() == 6;
  o.check(six == t.size(), std::to_string(six) + "/" + std::to_string(t.size()) + " T images carry exactly 6 fragments");

  SynthOptions big;
  big.forced_scale = 4.0;
  big.clutter = 0;
  const LabeledImageSet s = synth_scaled(take(train_images(), 200), 7, big);
  // Each digit's extent grows by the scale factor: compare bounding boxes of
  // the source and the canvas at the same threshold.
  const LabeledImageSet plain = take(train_images(), 200);
  auto extent = [](const float* img, std::size_t n) {
    std::size_t lo = n, hi = 0;
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        if (img[y * n + x] > 0.5f) lo = std::min({lo, x, y}), hi = std::max({hi, x, y});
    return hi >= lo ? static_cast<double>(hi - lo + 1) : 0.0;
  };
  double ratio_lo = INFINITY, ratio_hi = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double r = extent(s.images.data() + i * 112 * 112, 112) / extent(plain.images.data() + i * 784, 28);
    ratio_lo = std::min(ratio_lo, r), ratio_hi = std::max(ratio_hi, r);
  }
  LabeledImageSet ones;
  ones.images = Tensor<float>({1, 1, 28, 28}, 1.0f);
  ones.labels = {0};
  ones.perturbations = {{0, 0}};
  const LabeledImageSet full = synth_scaled(ones, 1, big);
  bool border = true;
  for (std::size_t k = 0; k < 112; ++k)
    border = border && full.images[k] > 0 && full.images[111 * 112 + k] > 0 && full.images[k * 112] > 0 &&
             full.images[k * 112 + 111] > 0;
  o.check(border, "S scale 4: a full 28-pixel square covers the 112-pixel canvas to every border");
  o.check(ratio_lo >= 3.5 && ratio_hi <= 4.5,
          fmt("S scale 4: digit extent / source extent in [%.3f, %.3f] over 200 digits", ratio_lo, ratio_hi));
  return o;
}

Outcome round_trips() {
  Outcome o;
  const fs::path dir = scratch("roundtrip");
  TrainConfig cfg;
  cfg.spec = builtin_spec("desk-r/stn-c1");
  cfg.seed = 3;
  cfg.batch_size = 16;
  cfg.stages = {{30, 1.0}};
  cfg.train_subset = 500;
  const TrainResult r = train(cfg, train_images());
  const fs::path ck = dir / "a.stnc";
  checkpoint_save(*r.net, r.normalization, cfg.variant, ck);
  const Checkpoint back = checkpoint_load(ck, &cfg.spec);
  checkpoint_save(*back.net, back.normalization, back.variant, dir / "b.stnc");
  bool same_params = true;
  for (const auto& p : r.net->params())
    same_params = same_params && back.net->tensor(p.name).values().size() == p.tensor->values().size() &&
                  std::equal(p.tensor->values().begin(), p.tensor->values().end(), back.net->tensor(p.name).values().begin());
  o.check(same_params && read_bytes(ck) == read_bytes(dir / "b.stnc") && back.normalization == r.normalization,
          "checkpoint save/load/save: parameters and file bytes identical");

  // IDX: a good file, then the same file with its magic or tail damaged.
  const LabeledImageSet raw = load_idx(files().test_images, files().test_labels);
  std::vector<std::uint8_t> idx = {0, 0, 8, 3};
  auto be32 = [&](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) idx.push_back(static_cast<std::uint8_t>(v >> s));
  };
  const std::uint32_t n = 50;
  be32(n), be32(28), be32(28);
  for (std::size_t i = 0; i < n * 784; ++i) idx.push_back(static_cast<std::uint8_t>(std::lround(raw.images[i] * 255)));
  std::vector<std::uint8_t> lab = {0, 0, 8, 1, 0, 0, 0, static_cast<std::uint8_t>(n)};
  for (std::size_t i = 0; i < n; ++i) lab.push_back(raw.labels[i]);
  write_bytes(dir / "img", idx);
  write_bytes(dir / "lab", lab);
  const LabeledImageSet good = load_idx(dir / "img", dir / "lab");
  o.check(good.size() == n && good.labels == std::vector<std::uint8_t>(raw.labels.begin(), raw.labels.begin() + n),
          "IDX rewrite of " + std::to_string(n) + " bundled test images loads");
  auto bad_magic = idx;
  bad_magic[2] = 0x09;
  write_bytes(dir / "magic", bad_magic);
  auto cut = idx;
  cut.resize(cut.size() - 100);
  write_bytes(dir / "cut", cut);
  auto rejects = [&](const fs::path& p) {
    try {
      load_idx(p, dir / "lab");
    } catch (const FormatError&) {
      return true;
    }
    return false;
  };
  o.check(rejects(dir / "magic"), "IDX with corrupted magic rejected with FormatError");
  o.check(rejects(dir / "cut"), "truncated IDX rejected with FormatError");

  const LabeledImageSet eval = make_eval_set(take(test_images(), 300), Variant::R, kDefaultEvalSeed, 3, r.normalization);
  save_cache(eval, dir / "eval.cache");
  const LabeledImageSet reloaded = load_cache(dir / "eval.cache");
  const EvalReport e1 = evaluate(*r.net, eval), e2 = evaluate(*back.net, reloaded);
  o.check(e1.error_pct == e2.error_pct && e1.pose && e2.pose && e1.pose->average == e2.pose->average &&
              e1.pose->per_label == e2.pose->per_label && e1.heatmap == e2.heatmap && e1.mean_det == e2.mean_det,
          fmt("cache reload + checkpoint reload reproduce the evaluation (error %.2f%%, pose %.6f)", e1.error_pct,
              e1.pose ? e1.pose->average : NAN));
  fs::remove_all(dir);
  return o;
}

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "gradient suite", gradients},
      {2, "parameter counts", parameter_counts},
      {3, "similarity fit oracle", similarity_fit},
      {4, "equivariance audit", equivariance_audit},
      {5, "desk-scale rotation experiment", desk_reproduction},
      {6, "iterative composition", iterative_composition},
      {7, "data pipeline", data_pipeline},
      {8, "round trips", round_trips},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::stoi(argv[i]));
  std::ofstream file("acceptance_report.txt");
  auto emit = [&](const std::string& line) {
    std::cout << line << "\n" << std::flush;
    file << line << "\n" << std::flush;
  };
  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    emit(std::string(o.pass ? "[PASS] " : "[FAIL] ") + "criterion " + std::to_string(c.id) + ": " + c.name +
         fmt(" (%.1f s)", seconds_since(t0)));
    for (const auto& l : o.lines) emit("         " + l);
    failed += !o.pass;
  }
  emit(failed ? "acceptance: " + std::to_string(failed) + " criteria failed" : std::string("acceptance: all passed"));
  return failed ? 1 : 0;
}
