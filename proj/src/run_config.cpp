#include "p2t/run_config.hpp"

#include <fstream>
#include <sstream>

#include "json_fields.hpp"
#include "p2t/checkpoint.hpp"

namespace p2t {

using nlohmann::json;
using namespace json_fields;

void RunConfig::validate() const {
  model.validate();
  train.validate();
  dataset.validate();
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
  if (dataset.num_classes != model.num_classes)
    throw ConfigError("dataset.num_classes: " + std::to_string(dataset.num_classes) + " does not match model.num_classes " +
                      std::to_string(model.num_classes));
  if (dataset.image_size % model.total_stride() != 0)
    throw ConfigError("dataset.image_size: " + std::to_string(dataset.image_size) + " is not a multiple of the model stride " +
                      std::to_string(model.total_stride()));
}

RunConfig run_config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("run config: malformed JSON: ") + e.what());
  }
  reject_unknown(j, {"model", "train", "dataset", "output_dir"}, "run config");
  if (!j.contains("model")) throw ConfigError("run config: missing key 'model'");
  if (!j.contains("output_dir")) throw ConfigError("run config: missing key 'output_dir'");

  RunConfig rc;
  rc.model = model_config_from_json(j["model"].dump());
  rc.output_dir = get_string(j["output_dir"], "output_dir");

  if (j.contains("train")) {
    const auto& t = j["train"];
    reject_unknown(t, {"lr", "weight_decay", "warmup_steps", "total_steps", "batch_size", "seed"}, "train");
    if (t.contains("lr")) rc.train.lr = get_number(t["lr"], "train.lr");
    if (t.contains("weight_decay")) rc.train.weight_decay = get_number(t["weight_decay"], "train.weight_decay");
    if (t.contains("warmup_steps")) rc.train.warmup_steps = get_size(t["warmup_steps"], "train.warmup_steps");
    if (t.contains("total_steps")) rc.train.total_steps = get_size(t["total_steps"], "train.total_steps");
    if (t.contains("batch_size")) rc.train.batch_size = get_size(t["batch_size"], "train.batch_size");
    if (t.contains("seed")) rc.train.seed = get_size(t["seed"], "train.seed");
  }

  rc.dataset.image_size = rc.model.image_size;
  rc.dataset.num_classes = rc.model.num_classes;
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    reject_unknown(d, {"kind", "num_samples", "image_size", "num_classes", "seed"}, "dataset");
    if (d.contains("kind")) rc.dataset.kind = dataset_kind_from_string(get_string(d["kind"], "dataset.kind"));
    if (d.contains("num_samples")) rc.dataset.num_samples = get_size(d["num_samples"], "dataset.num_samples");
    if (d.contains("image_size")) rc.dataset.image_size = get_size(d["image_size"], "dataset.image_size");
    if (d.contains("num_classes")) rc.dataset.num_classes = get_size(d["num_classes"], "dataset.num_classes");
    if (d.contains("seed")) rc.dataset.seed = get_size(d["seed"], "dataset.seed");
  }
  rc.validate();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read run config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return run_config_from_json(buf.str());
}

std::string to_json(const RunConfig& rc) {
  json j{{"model", json::parse(to_json(rc.model))},
         {"train",
          {{"lr", rc.train.lr},
           {"weight_decay", rc.train.weight_decay},
           {"warmup_steps", rc.train.warmup_steps},
           {"total_steps", rc.train.total_steps},
           {"batch_size", rc.train.batch_size},
           {"seed", rc.train.seed}}},
         {"dataset",
          {{"kind", to_string(rc.dataset.kind)},
           {"num_samples", rc.dataset.num_samples},
           {"image_size", rc.dataset.image_size},
           {"num_classes", rc.dataset.num_classes},
           {"seed", rc.dataset.seed}}},
         {"output_dir", rc.output_dir.string()}};
  return j.dump(2);
}

RunResult run_training(const RunConfig& rc, const TrainCallback& on_step) {
  rc.validate();
  std::error_code ec;
  std::filesystem::create_directories(rc.output_dir, ec);
  if (ec) throw IoError("cannot create output directory " + rc.output_dir.string() + ": " + ec.message());

  RunResult result;
  result.metrics_csv = rc.output_dir / "metrics.csv";
  result.checkpoint = rc.output_dir / "checkpoint.bin";
  {
    std::ofstream cfg(rc.output_dir / "config.json");
    cfg << to_json(rc) << '\n';
    if (!cfg) throw IoError("cannot write " + (rc.output_dir / "config.json").string());
  }
  std::ofstream csv(result.metrics_csv, std::ios::binary);
  if (!csv) throw IoError("cannot write " + result.metrics_csv.string());
  csv << metrics_csv_header() << '\n';

  auto model = build_model<float>(rc.model, rc.train.seed);
  result.records = train(model, rc.dataset, rc.train, [&](const TrainRecord& r) {
    csv << metrics_csv_row(r) << '\n';
    csv.flush();
    if (on_step) on_step(r);
  });
  if (!csv) throw IoError("error while writing " + result.metrics_csv.string());
  save_checkpoint(result.checkpoint, model);
  return result;
}

}  // namespace p2t
