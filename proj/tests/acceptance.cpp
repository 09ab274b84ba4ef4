// Acceptance run: one PASS/FAIL line per criterion, details indented below.
// Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "oracles.hpp"
#include "p2t/complexity.hpp"
#include "p2t/gradcheck_suite.hpp"
#include "p2t/pmhsa.hpp"
#include "p2t/train.hpp"

using namespace p2t;

namespace {

const char* const kFullPresets[] = {"tiny", "small", "base", "large"};

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void expect(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back(std::string(ok ? "ok    " : "FAILED ") + what);
  }
  void note(const std::string& what) { notes.push_back("       " + what); }
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Outcome parameters() {
  Outcome o;
  for (const char* name : kFullPresets) {
    PresetReference ref;
    preset_reference(name, ref);
    const auto closed = count_params(preset(name)).total_params;
    auto model = build_model<float>(preset(name), 0);
    const auto built = model.parameter_count();
    const double dev = (static_cast<double>(closed) - ref.params) / ref.params;
    o.expect(closed == built, std::string(name) + ": closed form " + std::to_string(closed) + " == built " +
                                  std::to_string(built));
    o.expect(std::abs(dev) <= 0.05, std::string(name) + ": " + fmt("%.2fM", closed / 1e6) + " vs published " +
                                        fmt("%.1fM", ref.params / 1e6) + " (" + fmt("%+.2f%%", dev * 100) + ")");
  }
  for (const char* name : {"micro", "nano"}) {
    auto model = build_model<float>(preset(name), 0);
    o.expect(count_params(preset(name)).total_params == model.parameter_count(),
             std::string(name) + ": closed form == built " + std::to_string(model.parameter_count()));
  }
  return o;
}

Outcome flops() {
  Outcome o;
  for (const char* name : kFullPresets) {
    PresetReference ref;
    preset_reference(name, ref);
    const auto report = count_flops(preset(name), {224, 224});
    const double got = static_cast<double>(report.total_flops);
    const double dev = (got - ref.flops) / ref.flops;
    const std::string csv = std::string("acceptance_flops_") + name + ".csv";
    std::ofstream(csv) << format_report_csv(report);
    o.expect(std::abs(dev) <= 0.10, std::string(name) + ": " + fmt("%.3fG", got / 1e9) + " vs published " +
                                        fmt("%.1fG", ref.flops / 1e9) + " (" + fmt("%+.2f%%", dev * 100) +
                                        "), per-layer breakdown in " + csv);
  }
  return o;
}

Outcome squeeze() {
  Outcome o;
  struct Row {
    std::vector<std::size_t> ratios;
    long printed;
  };
  for (const auto& row : std::vector<Row>{
           {{24}, 576}, {{16}, 256}, {{12}, 144}, {{8}, 64}, {{12, 24}, 115}, {{12, 16, 20, 24}, 66}}) {
    const double r = squeeze_ratio(row.ratios).analytic_ratio;
    std::string label;
    for (auto p : row.ratios) label += (label.empty() ? "" : ",") + std::to_string(p);
    o.expect(std::lround(r) == row.printed,
             "{" + label + "}: " + fmt("%.4f", r) + " rounds to " + std::to_string(row.printed));
  }
  const double r = squeeze_ratio(std::vector<std::size_t>{12, 16, 20, 24}).analytic_ratio;
  o.expect(std::round(r * 10) / 10 == 66.3, "{12,16,20,24}: M = N / " + fmt("%.1f", r));
  return o;
}

Outcome geometry() {
  Outcome o;
  const std::size_t expect[] = {56, 28, 14, 7};
  auto micro = build_model<float>(preset("micro"), 0);
  Graph<float> g;
  const auto pyr = forward_features(micro, g.input(Tensor<float>({1, 3, 224, 224}, 0.5f)));
  std::string chain;
  bool ok = true;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& s = pyr.maps[i].shape();
    ok &= s[2] == expect[i] && s[3] == expect[i];
    chain += (i ? " -> " : "") + std::to_string(s[2]) + "x" + std::to_string(s[3]);
  }
  o.expect(ok, "micro forward at 224: " + chain);
  for (const char* name : kFullPresets) {
    const auto grids = preset(name).stage_grids({224, 224});
    bool match = true;
    for (std::size_t i = 0; i < 4; ++i) match &= grids[i] == GridSize{expect[i], expect[i]};
    o.expect(match, std::string(name) + ": stage grids 56, 28, 14, 7");
  }
  return o;
}

Outcome gradients() {
  Outcome o;
  for (auto scope : {GradcheckScope::ops, GradcheckScope::block, GradcheckScope::model}) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto report = gradcheck_suite(scope);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double worst = 0;
    for (const auto& c : report.cases) {
      worst = std::max(worst, c.max_rel_error);
      if (!c.passed) o.note("failing case: " + c.name + " " + fmt("%.3e", c.max_rel_error));
    }
    o.expect(report.passed() && worst < 1e-4, to_string(scope) + ": " + std::to_string(report.cases.size()) +
                                                  " cases, max rel error " + fmt("%.2e", worst) + " (" +
                                                  fmt("%.1f s", secs) + ")");
  }
  return o;
}

// P-MHSA with ratios {1} and no RPE keeps every token, so keys and values
// come from the pool LayerNorm of x itself. The oracle is plain multi-head
// attention with that LayerNorm applied to its key/value input; on
// token-normalized x with an identity norm it is textbook self-attention.
Outcome attention_oracle() {
  Outcome o;
  std::uint64_t seed = 1000;
  double worst = 0, worst_plain = 0;
  int cases = 0;
  for (auto [b, h, w, c, heads] : std::vector<std::array<std::size_t, 5>>{
           {1, 2, 2, 8, 1}, {2, 4, 4, 8, 2}, {2, 3, 5, 16, 4}, {1, 8, 8, 24, 3}, {3, 4, 6, 32, 4}, {2, 7, 7, 16, 2}}) {
    PMHSAConfig cfg;
    cfg.channels = c;
    cfg.heads = heads;
    cfg.pool_ratios = {1};
    cfg.rpe_enabled = false;
    Initializer init(seed);
    auto s = make_pmhsa_state<double>("attn", cfg, init);
    testing::randomize(s, seed + 1);
    const std::size_t n = h * w;
    for (bool plain : {false, true}) {
      auto x = testing::random_tensor({b, n, c}, seed + 2, -2, 2);
      if (plain) {
        s.norm.gamma.value.fill(1);
        s.norm.beta.value.fill(0);
        x = Tensor<double>(x.shape(), oracle::layer_norm(x.storage(), c, 0.0));
      }
      Graph<double> g;
      const auto out = pmhsa_forward(g.input(x), {h, w}, s, cfg).value();
      for (std::size_t i = 0; i < b; ++i) {
        const std::vector<double> xi(x.storage().begin() + i * n * c, x.storage().begin() + (i + 1) * n * c);
        const auto kv = plain ? xi
                              : oracle::layer_norm(xi, c, 1e-6, s.norm.gamma.value.storage(), s.norm.beta.value.storage());
        const auto ref = oracle::mhsa(xi, kv, n, n, c, heads, s.q.weight.value.storage(), s.q.bias.value.storage(),
                                      s.k.weight.value.storage(), s.k.bias.value.storage(), s.v.weight.value.storage(),
                                      s.v.bias.value.storage(), s.o.weight.value.storage(), s.o.bias.value.storage());
        const std::vector<double> got(out.storage().begin() + i * n * c, out.storage().begin() + (i + 1) * n * c);
        (plain ? worst_plain : worst) = std::max(plain ? worst_plain : worst, oracle::max_abs_diff(got, ref));
      }
      ++cases;
    }
    seed += 10;
  }
  o.expect(worst < 1e-5, std::to_string(cases / 2) + " random shapes vs MHSA over the normalized sequence: max |diff| " +
                             fmt("%.2e", worst));
  o.expect(worst_plain < 1e-5, std::to_string(cases / 2) +
                                   " token-normalized inputs vs textbook self-attention: max |diff| " +
                                   fmt("%.2e", worst_plain));
  return o;
}

struct Run {
  std::vector<TrainRecord> records;
  double best_accuracy = 0;
  std::size_t first_95 = 0;
  double seconds = 0;
};

Run overfit(const ModelConfig& cfg) {
  SyntheticDataset ds;
  ds.num_samples = 32;
  ds.num_classes = cfg.num_classes;
  ds.image_size = 32;
  TrainConfig tc;
  tc.total_steps = 500;
  tc.warmup_steps = 25;
  tc.batch_size = 32;
  auto model = build_model<float>(cfg, tc.seed);
  const auto t0 = std::chrono::steady_clock::now();
  Run r;
  r.records = train(model, ds, tc);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& rec : r.records) {
    r.best_accuracy = std::max(r.best_accuracy, rec.train_accuracy);
    if (!r.first_95 && rec.train_accuracy >= 0.95) r.first_95 = rec.step;
  }
  return r;
}

Outcome learning() {
  Outcome o;
  const auto base = preset("micro");
  const auto describe = [](const Run& r) {
    return "final loss " + fmt("%.4f", r.records.back().loss) + ", accuracy " +
           fmt("%.3f", r.records.back().train_accuracy) + ", first >= 95% at step " + std::to_string(r.first_95) +
           " (" + fmt("%.1f s", r.seconds) + ")";
  };
  const auto first = overfit(base);
  o.expect(first.first_95 != 0, "micro, 32 blobs, 500 steps: " + describe(first));
  const auto again = overfit(base);
  o.expect(again.records == first.records, "rerun with the same seeds reproduces all 500 records exactly");

  struct Arm {
    const char* name;
    std::function<void(ModelConfig&)> apply;
    bool required;
  };
  const std::vector<Arm> arms{
      {"max pooling", [](ModelConfig& c) { c.pool_kind = PoolKind::max; }, true},
      {"RPE off", [](ModelConfig& c) { c.rpe = false; }, true},
      {"plain MLP feed-forward", [](ModelConfig& c) { c.ffn = FfnKind::mlp; }, true},
      {"fixed pooled sizes {1,2,3,6}", [](ModelConfig& c) { c.pooling = PoolingMode::fixed_sizes; }, true},
      {"GELU activation", [](ModelConfig& c) { c.activation = Activation::gelu; }, false},
  };
  for (const auto& arm : arms) {
    auto cfg = base;
    arm.apply(cfg);
    try {
      const auto r = overfit(cfg);
      // a trace identical to the baseline would mean the toggle never reached the model
      const bool live = r.records != first.records;
      const bool done = r.records.size() == 500 && live;
      const std::string line = std::string(arm.name) + ": " + describe(r) + (live ? "" : ", same trace as baseline");
      if (arm.required)
        o.expect(done, "arm " + line);
      else
        o.note("extra arm " + line);
    } catch (const DivergenceError& e) {
      if (arm.required) o.expect(false, std::string("arm ") + arm.name + ": " + e.what());
      else o.note(std::string("extra arm ") + arm.name + ": " + e.what());
    }
  }
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* title;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "parameter counts match the built models and the published totals within 5%", parameters},
      {2, "FLOPs at 224x224 within 10% of the published totals", flops},
      {3, "squeezed ratios reproduce the published column", squeeze},
      {4, "224x224 input gives the 56/28/14/7 token grids", geometry},
      {5, "gradient checks pass at 1e-4 in f64 (ops, block, model)", gradients},
      {6, "P-MHSA with ratios {1} and no RPE matches brute-force attention within 1e-5", attention_oracle},
      {7, "micro overfits 32 samples to >= 95% in 500 steps, reproducibly; ablation arms finish", learning},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.expect(false, std::string("exception: ") + e.what());
    }
    failed += !o.pass;
    std::printf("criterion %d: %s - %s\n", c.id, o.pass ? "PASS" : "FAIL", c.title);
    for (const auto& n : o.notes) std::printf("    %s\n", n.c_str());
    std::fflush(stdout);
  }
  std::printf(
      "criterion 8: OUT OF SCOPE - ImageNet top-1, ADE20K mIoU, COCO AP and FPS need cluster-scale training and "
      "are not reproduced; criteria 1-7 stand in for them\n");
  std::printf("%s: %d of 7 criteria failed\n", failed ? "FAIL" : "PASS", failed);
  return failed ? 1 : 0;
}
