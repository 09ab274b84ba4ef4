// Command-line front end over the C interface.
//
//   p2t summary   --preset tiny --input 224 [--layers] [--csv] [--macs2]
//   p2t squeeze   12 16 20 24 [--hw 56x56]
//   p2t train     run.json [--log-every 50]
//   p2t gradcheck ops|block|model
//   p2t compare   --n 3136 --c 64 vanilla pool:8 pyramid:12,16,20,24
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <unistd.h>

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "p2t/p2t.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Failure {
  int code;
};

// Shape errors here can only come from extents given on the command line.
int exit_code_for(p2t_status s) {
  return (s == P2T_ERR_CONFIG || s == P2T_ERR_INVALID_ARGUMENT || s == P2T_ERR_DIMENSION) ? kExitUsage
                                                                                          : kExitRuntime;
}

void check(p2t_status s) {
  if (s == P2T_OK) return;
  std::fprintf(stderr, "error: %s\n", p2t_last_error());
  throw Failure{exit_code_for(s)};
}

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
template <typename T, void (*Free)(T*)>
using Handle = std::unique_ptr<T, Deleter<T, Free>>;

using ConfigHandle = Handle<p2t_config, p2t_config_free>;
using ReportHandle = Handle<p2t_report, p2t_report_free>;
using CompareHandle = Handle<p2t_compare, p2t_compare_free>;
using RunConfigHandle = Handle<p2t_run_config, p2t_run_config_free>;
using GradcheckHandle = Handle<p2t_gradcheck, p2t_gradcheck_free>;

std::string take(char* s) {
  std::string out(s ? s : "");
  p2t_string_free(s);
  return out;
}

bool color_enabled(FILE* stream) {
  const char* no_color = std::getenv("NO_COLOR");
  if (no_color && *no_color) return false;
  return isatty(fileno(stream)) != 0;
}

std::string paint(const std::string& text, bool ok, bool color) {
  if (!color) return text;
  return std::string(ok ? "\033[32m" : "\033[31m") + text + "\033[0m";
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::fprintf(stderr, "error: cannot read %s\n", path.c_str());
    throw Failure{kExitUsage};
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// ---------------------------------------------------------------------------

struct SummaryArgs {
  std::string preset;
  std::string config;
  std::size_t input = 0;
  bool layers = false;
  bool csv = false;
  bool macs2 = false;
};

int run_summary(const SummaryArgs& a) {
  p2t_config* raw = nullptr;
  if (!a.preset.empty())
    check(p2t_config_from_preset(a.preset.c_str(), &raw));
  else
    check(p2t_config_from_json(read_file(a.config).c_str(), &raw));
  ConfigHandle cfg(raw);

  p2t_config_info info{};
  check(p2t_config_get_info(cfg.get(), &info));
  const std::size_t input = a.input ? a.input : info.image_size;
  const std::uint64_t scale = a.macs2 ? 2 : 1;

  p2t_report* rep = nullptr;
  check(p2t_count_flops(cfg.get(), input, input, &rep));
  ReportHandle report(rep);

  char* text = nullptr;
  if (a.csv) {
    check(p2t_report_format_text(report.get(), P2T_REPORT_CSV, scale, &text));
    std::fputs(take(text).c_str(), stdout);
    return kExitOk;
  }
  check(p2t_config_describe(cfg.get(), input, input, &text));
  std::printf("%s\n", take(text).c_str());
  check(p2t_report_format_text(report.get(), a.layers ? P2T_REPORT_TABLE_LAYERS : P2T_REPORT_TABLE, scale, &text));
  std::fputs(take(text).c_str(), stdout);

  int has_reference = 0;
  double ref_params = 0, ref_flops = 0;
  if (!a.preset.empty()) check(p2t_preset_reference(a.preset.c_str(), &has_reference, &ref_params, &ref_flops));
  if (has_reference) {
    std::uint64_t params = 0, flops = 0;
    check(p2t_report_totals(report.get(), &params, &flops));
    std::printf("published: %.1fM params (counted %+.1f%%)", ref_params / 1e6,
                100.0 * (static_cast<double>(params) - ref_params) / ref_params);
    if (input == 224)
      std::printf(", %.1fG FLOPs (counted %+.1f%%)", ref_flops / 1e9,
                  100.0 * (static_cast<double>(flops) - ref_flops) / ref_flops);
    std::printf("\n");
  }
  return kExitOk;
}

int run_squeeze(const std::vector<std::size_t>& ratios, const std::string& hw) {
  std::size_t h = 0, w = 0;
  if (!hw.empty()) {
    char x = 0;
    std::istringstream in(hw);
    if (!(in >> h >> x >> w) || x != 'x' || h == 0 || w == 0 || !in.eof()) {
      std::fprintf(stderr, "error: --hw expects HxW with positive extents, got '%s'\n", hw.c_str());
      return kExitUsage;
    }
  }
  p2t_squeeze_result r{};
  check(p2t_squeeze_ratio(ratios.data(), ratios.size(), h, w, &r));
  std::printf("pool ratios:");
  for (auto p : ratios) std::printf(" %zu", p);
  std::printf("\nsqueezed ratio N/M (analytic): %.1f\n", r.analytic_ratio);
  if (r.has_realized)
    std::printf("at %zux%zu: N = %zu, M = %zu, N/M = %.2f\n", h, w, h * w, r.realized_m, r.realized_ratio);
  return kExitOk;
}

void print_record(const p2t_train_record* r, void* user) {
  const auto every = *static_cast<std::size_t*>(user);
  if (every == 0 || (r->step % every != 0 && r->step != 1)) return;
  std::printf("step %5zu  loss %.6f  train_acc %.4f  lr %.3e\n", r->step, r->loss, r->train_accuracy, r->lr);
  std::fflush(stdout);
}

int run_train(const std::string& path, std::size_t log_every) {
  p2t_run_config* raw = nullptr;
  check(p2t_run_config_load(path.c_str(), &raw));
  RunConfigHandle rc(raw);
  char* text = nullptr;
  check(p2t_run_config_to_json(rc.get(), &text));
  std::printf("effective config:\n%s\n", take(text).c_str());
  std::fflush(stdout);

  p2t_train_record last{};
  std::size_t diverged = 0;
  const p2t_status s = p2t_train(rc.get(), print_record, &log_every, &last, &diverged);
  if (s == P2T_ERR_DIVERGENCE) {
    std::fprintf(stderr, "error: diverged at step %zu: %s\n", diverged, p2t_last_error());
    return kExitRuntime;
  }
  check(s);
  std::printf("done: %zu steps, final loss %.6f, train accuracy %.4f\n", last.step, last.loss, last.train_accuracy);
  return kExitOk;
}

int run_gradcheck(const std::string& scope) {
  p2t_gradcheck* raw = nullptr;
  check(p2t_gradcheck_run(scope.c_str(), &raw));
  GradcheckHandle g(raw);
  const bool color = color_enabled(stdout);
  std::size_t width = 4;
  for (std::size_t i = 0; i < p2t_gradcheck_case_count(g.get()); ++i) {
    const char* name = nullptr;
    check(p2t_gradcheck_case(g.get(), i, &name, nullptr, nullptr, nullptr));
    width = std::max(width, std::string(name).size());
  }
  std::printf("%-*s  %13s  %8s  result\n", static_cast<int>(width), "case", "max rel error", "entries");
  for (std::size_t i = 0; i < p2t_gradcheck_case_count(g.get()); ++i) {
    const char* name = nullptr;
    double err = 0;
    std::size_t checked = 0;
    int passed = 0;
    check(p2t_gradcheck_case(g.get(), i, &name, &err, &checked, &passed));
    std::printf("%-*s  %13.3e  %8zu  %s\n", static_cast<int>(width), name, err, checked,
                paint(passed ? "PASS" : "FAIL", passed, color).c_str());
  }
  const bool ok = p2t_gradcheck_passed(g.get()) != 0;
  std::printf("%s: %zu cases, tolerance %.0e: %s\n", scope.c_str(), p2t_gradcheck_case_count(g.get()),
              p2t_gradcheck_tolerance(g.get()), paint(ok ? "PASS" : "FAIL", ok, color).c_str());
  return ok ? kExitOk : kExitRuntime;
}

int run_compare(std::uint64_t n, std::uint64_t c, const std::vector<std::string>& specs) {
  std::vector<const char*> ptrs;
  for (const auto& s : specs) ptrs.push_back(s.c_str());
  p2t_compare* raw = nullptr;
  check(p2t_compare_attention(n, c, ptrs.data(), ptrs.size(), &raw));
  CompareHandle cmp(raw);

  struct Row {
    std::string label;
    std::uint64_t m, flops;
  };
  std::vector<Row> rows;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < p2t_compare_row_count(cmp.get()); ++i) {
    const char* label = nullptr;
    std::uint64_t m = 0, flops = 0;
    check(p2t_compare_row(cmp.get(), i, &label, &m, &flops));
    if (!seen.insert(label).second) {
      std::fprintf(stderr, "warning: duplicate variant '%s' ignored\n", specs[i].c_str());
      continue;
    }
    rows.push_back({label, m, flops});
  }
  std::size_t width = 7;
  for (const auto& r : rows) width = std::max(width, r.label.size());
  std::printf("N = %" PRIu64 ", C = %" PRIu64 "\n", n, c);
  std::printf("%-*s  %10s  %18s  %8s\n", static_cast<int>(width), "variant", "M", "core flops (MAC)", "vs first");
  for (const auto& r : rows)
    std::printf("%-*s  %10" PRIu64 "  %18" PRIu64 "  %8.3f\n", static_cast<int>(width), r.label.c_str(), r.m, r.flops,
                static_cast<double>(r.flops) / static_cast<double>(rows.front().flops));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pyramid-pooling vision transformer toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", p2t_version());

  SummaryArgs summary;
  auto* sc_summary = app.add_subcommand("summary", "Architecture table and parameter/FLOP report");
  auto* opt_preset = sc_summary->add_option("--preset", summary.preset, "Preset name");
  auto* opt_config = sc_summary->add_option("--config", summary.config, "Model config JSON file");
  opt_preset->excludes(opt_config);
  sc_summary->add_option("--input", summary.input, "Square input extent (default: the model's image size)")
      ->check(CLI::PositiveNumber);
  sc_summary->add_flag("--layers", summary.layers, "Include the per-layer breakdown");
  sc_summary->add_flag("--csv", summary.csv, "Emit the per-layer report as CSV on stdout");
  sc_summary->add_flag("--macs2", summary.macs2, "Report FLOPs as 2 x MACs");

  std::vector<std::size_t> ratios;
  std::string hw;
  auto* sc_squeeze = app.add_subcommand("squeeze", "Squeezed ratio N/M of a pooling pyramid");
  sc_squeeze->add_option("ratios", ratios, "Pooling ratios")->required()->check(CLI::PositiveNumber);
  sc_squeeze->add_option("--hw", hw, "Token grid HxW for the realized M");

  std::string train_config;
  std::size_t log_every = 50;
  auto* sc_train = app.add_subcommand("train", "Train on a synthetic dataset from a run config");
  sc_train->add_option("config", train_config, "Run config JSON file")->required();
  sc_train->add_option("--log-every", log_every, "Print progress every N steps (0: silent)");

  std::string scope;
  auto* sc_grad = app.add_subcommand("gradcheck", "Compare backward passes against finite differences");
  sc_grad->add_option("scope", scope, "ops, block or model")->required()->check(CLI::IsMember({"ops", "block", "model"}));

  std::uint64_t n = 0, c = 0;
  std::vector<std::string> variants;
  auto* sc_compare = app.add_subcommand("compare", "Attention-core cost of attention variants");
  sc_compare->add_option("--n", n, "Sequence length N")->required()->check(CLI::PositiveNumber);
  sc_compare->add_option("--c", c, "Channels C")->required()->check(CLI::PositiveNumber);
  sc_compare->add_option("variants", variants, "vanilla | pool:<p> | pyramid:<p1>,<p2>,...")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*sc_summary) {
      if (summary.preset.empty() && summary.config.empty()) {
        std::fprintf(stderr, "error: summary needs --preset or --config\n");
        return kExitUsage;
      }
      return run_summary(summary);
    }
    if (*sc_squeeze) return run_squeeze(ratios, hw);
    if (*sc_train) return run_train(train_config, log_every);
    if (*sc_grad) return run_gradcheck(scope);
    if (*sc_compare) return run_compare(n, c, variants);
  } catch (const Failure& f) {
    return f.code;
  }
  return kExitUsage;
}
