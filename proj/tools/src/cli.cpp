// SPDX-License-Identifier: Apache-2.0
#include "tractseg_cli/cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tractseg/dataset.hpp"
#include "tractseg/error.hpp"
#include "tractseg/fixture.hpp"
#include "tractseg/rle.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace tractseg::cli {

namespace {

/// Reads a flat (or nested) JSON object into CLI11 config items; nested
/// objects become dotted parents, arrays become multiple inputs.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    throw CLI::ConfigError("writing JSON config through CLI11 is not supported");
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json doc;
    try {
      doc = json::parse(input);
    } catch (const json::exception& e) {
      throw CLI::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw CLI::ConfigError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    collect(doc, {}, items);
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_null()) return "";
    return v.dump();
  }

  static void collect(const json& obj, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : obj.items()) {
      if (value.is_object()) {
        auto p = parents;
        p.push_back(key);
        collect(value, p, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& e : value) item.inputs.push_back(scalar(e));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
  }
};

/// Fills options of `sub` that were not given on the command line from the
/// JSON file named by its --config option, then enforces `required`.
void apply_config(CLI::App* sub, const std::vector<CLI::Option*>& required, bool allow_extras) {
  CLI::Option* cfg = sub->get_config_ptr();
  if (cfg != nullptr && cfg->count() > 0) {
    const std::string file = cfg->as<std::string>();
    std::ifstream is(file);
    if (!is) throw CLI::FileError::Missing(file);
    for (const auto& item : JsonConfig{}.from_config(is)) {
      CLI::Option* op = item.parents.empty() ? sub->get_option_no_throw("--" + item.name) : nullptr;
      if (op == nullptr || op == cfg) {
        if (allow_extras) continue;
        throw CLI::ConfigError::Extras(item.fullname());
      }
      if (op->count() > 0) continue;
      op->add_result(item.inputs);
      op->run_callback();
    }
  }
  for (CLI::Option* op : required)
    if (op->count() == 0) throw CLI::RequiredError(op->get_name());
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string read_all(std::istream& is) {
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void add_model_options(CLI::App* sub, UNetConfig& model, std::string& block_style) {
  sub->add_option("--depth", model.depth, "U-Net resolution levels including the bottleneck");
  sub->add_option("--base-channels", model.base_channels, "Width of the first encoder level");
  sub->add_option("--block-style", block_style, "plain | residual | inverted_residual");
  sub->add_option("--expansion", model.expansion, "Inverted-residual expansion factor");
}

struct PredictionMap {
  std::map<std::string, std::array<std::optional<std::string>, kNumClasses>> by_id;
};

PredictionMap load_rows(const fs::path& csv) {
  PredictionMap out;
  std::vector<std::string> bad;
  for (auto& row : read_annotations(csv)) {
    const std::string where = csv.string() + ":" + std::to_string(row.line);
    auto k = class_index(row.class_name);
    if (!k) {
      bad.push_back(where + ": unknown class '" + row.class_name + "'");
      continue;
    }
    auto& slot = out.by_id[row.id][*k];
    if (slot) {
      bad.push_back(where + ": duplicate row for " + row.id + " " + row.class_name);
      continue;
    }
    slot = std::move(row.segmentation);
  }
  if (!bad.empty()) {
    std::string msg = "invalid rows in " + csv.string() + ":";
    for (const auto& b : bad) msg += "\n  " + b;
    throw DataError(msg, bad);
  }
  return out;
}

std::vector<std::string> missing_ids(const PredictionMap& from, const PredictionMap& in) {
  std::vector<std::string> out;
  for (const auto& [id, _] : from.by_id) {
    if (!in.by_id.count(id)) out.push_back(id);
  }
  return out;
}

fs::path default_annotations(const fs::path& data) {
  const fs::path p = data / "train.csv";
  return fs::exists(p) ? p : fs::path{};
}

std::string report_csv(const MetricReport& r) {
  std::string out = "iou_large_bowel,iou_small_bowel,iou_stomach,mean_iou\n";
  for (std::size_t k = 0; k < kNumClasses; ++k) out += fmt(r.per_class_iou[k]) + ",";
  return out + fmt(r.mean_iou) + "\n";
}

void print_report(const MetricReport& r, std::ostream& out) {
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    out << "iou_" << kClassNames[k] << " " << fmt(r.per_class_iou[k]) << "\n";
  }
  out << "mean_iou " << fmt(r.mean_iou) << "\n";
}

}  // namespace

json to_json(const RunConfig& c) {
  json j;
  j["data"] = c.data.string();
  j["annotations"] = c.annotations.string();
  j["run-root"] = c.run_root.string();
  j["epochs"] = c.train.epochs;
  j["batch-size"] = c.train.batch_size;
  j["lr"] = c.train.lr_init;
  j["lr-min"] = c.train.lr_min;
  j["split"] = c.train.split_fraction;
  j["loss"] = std::string(to_string(c.train.loss.tag));
  j["tversky-alpha"] = c.train.loss.tversky_alpha;
  j["tversky-beta"] = c.train.loss.tversky_beta;
  j["smooth-eps"] = c.train.loss.smooth_eps;
  j["flips"] = c.train.augment_flips;
  j["seed"] = c.train.seed;
  j["image-size"] = c.train.image_size;
  j["patch-eval"] = c.patch_eval;
  j["depth"] = c.model.depth;
  j["base-channels"] = c.model.base_channels;
  j["block-style"] = std::string(to_string(c.model.block_style));
  j["expansion"] = c.model.expansion;
  return j;
}

fs::path make_run_dir(const fs::path& run_root, std::uint64_t seed) {
  fs::create_directories(run_root);
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  const std::string base = std::string(stamp) + "_seed" + std::to_string(seed);
  for (int k = 1;; ++k) {
    const fs::path dir = run_root / (k == 1 ? base : base + "-" + std::to_string(k));
    if (fs::create_directory(dir)) return dir;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"U-Net segmentation of GI-tract organs in 16-bit scan slices", "tractseg"};
  app.config_formatter(std::make_shared<JsonConfig>());
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  // fixture
  FixtureOptions fx;
  fs::path fixture_out;
  auto* fixture = app.add_subcommand("fixture", "Write a synthetic dataset of geometric pseudo-organs");
  fixture->add_option("--out", fixture_out, "Destination directory")->required();
  fixture->add_option("--cases", fx.cases, "Number of cases");
  fixture->add_option("--days", fx.days_per_case, "Days per case");
  fixture->add_option("--slices", fx.slices_per_day, "Slices per day");
  fixture->add_option("--height", fx.height, "Slice height in pixels");
  fixture->add_option("--width", fx.width, "Slice width in pixels");
  fixture->add_option("--seed", fx.seed, "Shape jitter seed");

  // train
  RunConfig rc;
  std::string train_loss = std::string(to_string(rc.train.loss.tag));
  std::string train_style = std::string(to_string(rc.model.block_style));
  std::vector<std::string> grid_styles, grid_losses;
  auto* train_cmd = app.add_subcommand("train", "Train a U-Net and write history plus checkpoints");
  train_cmd->set_config("--config", "", "JSON config file; flags override its values");
  auto* train_data = train_cmd->add_option("--data", rc.data, "Dataset root");
  train_cmd->add_option("--annotations", rc.annotations, "Annotation CSV (default <data>/train.csv)");
  train_cmd->add_option("--run-root", rc.run_root, "Parent directory of run directories");
  train_cmd->add_option("--epochs", rc.train.epochs, "Training epochs");
  train_cmd->add_option("--batch-size", rc.train.batch_size, "Mini-batch size");
  train_cmd->add_option("--lr", rc.train.lr_init, "Initial learning rate");
  train_cmd->add_option("--lr-min", rc.train.lr_min, "Cosine schedule floor");
  train_cmd->add_option("--split", rc.train.split_fraction, "Fraction of cases used for training");
  train_cmd->add_option("--loss", train_loss, "IoULoss | BceTversky | IoUTversky");
  train_cmd->add_option("--tversky-alpha", rc.train.loss.tversky_alpha, "Tversky false-positive weight");
  train_cmd->add_option("--tversky-beta", rc.train.loss.tversky_beta, "Tversky false-negative weight");
  train_cmd->add_option("--smooth-eps", rc.train.loss.smooth_eps, "Soft-metric smoothing constant");
  train_cmd->add_flag("--flips,!--no-flips", rc.train.augment_flips, "Random horizontal/vertical flips");
  train_cmd->add_option("--seed", rc.train.seed, "Seed for init, split, shuffling and augmentation");
  train_cmd->add_option("--image-size", rc.train.image_size, "Square model input side");
  train_cmd->add_flag("--patch-eval", rc.patch_eval, "Validate oversized slices patch-wise");
  add_model_options(train_cmd, rc.model, train_style);
  train_cmd->add_option("--grid-styles", grid_styles,
                        "Run the block-style x loss grid over these styles instead of one model");
  train_cmd->add_option("--grid-losses", grid_losses, "Losses for the grid (default all three)");

  // predict
  UNetConfig pm;
  std::string predict_style = std::string(to_string(pm.block_style));
  fs::path weights, predict_data, predict_out = "predictions.csv";
  std::size_t predict_size = kModelInputSize;
  bool patch = true;
  auto* predict = app.add_subcommand("predict", "Predict masks for every slice and write a submission CSV");
  predict->set_config("--config", "", "JSON config file (e.g. a run's config.json); flags override it");
  predict->allow_config_extras(CLI::config_extras_mode::ignore_all);
  auto* predict_weights = predict->add_option("--weights", weights, "Checkpoint file");
  auto* predict_data_opt = predict->add_option("--data", predict_data, "Dataset root");
  predict->add_option("--out", predict_out, "Output CSV");
  predict->add_option("--image-size", predict_size, "Square model input side");
  predict->add_flag("--patch,!--no-patch", patch, "Patch-wise inference for slices larger than the input");
  add_model_options(predict, pm, predict_style);

  // eval
  fs::path eval_pred, eval_truth, eval_data, eval_out;
  auto* eval = app.add_subcommand("eval", "Score a prediction CSV against ground truth");
  eval->add_option("--pred", eval_pred, "Prediction CSV")->required();
  eval->add_option("--truth", eval_truth, "Ground-truth CSV")->required();
  eval->add_option("--data", eval_data, "Dataset root providing slice dimensions")->required();
  eval->add_option("--out", eval_out, "Also write the metrics as CSV here");

  // rle
  std::string rle_text;
  std::size_t rle_h = 0, rle_w = 0;
  auto* rle = app.add_subcommand("rle", "Run-length codec utility (reads stdin when no argument)");
  rle->require_subcommand(1);
  auto* rle_dec = rle->add_subcommand("decode", "RLE -> row-major 0/1 bitmap");
  rle_dec->add_option("rle", rle_text, "Run-length string");
  rle_dec->add_option("--height", rle_h, "Mask height")->required();
  rle_dec->add_option("--width", rle_w, "Mask width")->required();
  auto* rle_enc = rle->add_subcommand("encode", "Row-major 0/1 bitmap -> RLE");
  rle_enc->add_option("bitmap", rle_text, "Bitmap text; whitespace is ignored");
  rle_enc->add_option("--height", rle_h, "Mask height (checked when given)");
  rle_enc->add_option("--width", rle_w, "Mask width (checked when given)");

  // curves
  std::vector<fs::path> histories;
  std::vector<std::string> run_names;
  fs::path curves_out;
  auto* curves = app.add_subcommand("curves", "Merge history CSVs into run,epoch,metric,value rows");
  curves->add_option("histories", histories, "history.csv files")->required();
  curves->add_option("--names", run_names, "Run labels (default: run directory names)");
  curves->add_option("--out", curves_out, "Output CSV (default stdout)");

  try {
    app.parse(argc, argv);
    if (*train_cmd) apply_config(train_cmd, {train_data}, false);
    if (*predict) apply_config(predict, {predict_weights, predict_data_opt}, true);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kSuccess : kUsageError;
  }

  try {
    if (*fixture) {
      const FixtureSummary s = generate_fixture(fixture_out, fx);
      out << "wrote " << s.slices << " slices and " << s.annotations.string() << "\n";
      return kSuccess;
    }

    if (*train_cmd) {
      rc.train.loss.tag = parse_loss_tag(train_loss);
      rc.model.block_style = parse_block_style(train_style);
      rc.model.seed = rc.train.seed;
      rc.model.validate();
      rc.train.validate();
      if (!fs::is_directory(rc.data)) {
        throw DataError("data directory does not exist: " + rc.data.string(), {rc.data.string()});
      }
      const fs::path ann = rc.annotations.empty() ? default_annotations(rc.data) : rc.annotations;
      const DatasetIndex index = ann.empty() ? ingest(rc.data) : ingest(rc.data, ann);
      const fs::path dir = make_run_dir(rc.run_root, rc.train.seed);
      {
        std::ofstream cfg(dir / "config.json");
        cfg << to_json(rc).dump(2) << "\n";
      }
      if (!grid_styles.empty()) {
        std::vector<BlockStyle> styles;
        for (const auto& s : grid_styles) styles.push_back(parse_block_style(s));
        std::vector<LossTag> losses;
        for (const auto& l : grid_losses) losses.push_back(parse_loss_tag(l));
        if (losses.empty()) losses = {LossTag::IoULoss, LossTag::BceTversky, LossTag::IoUTversky};
        const ExperimentTable table = run_experiment_grid(styles, losses, rc.model, rc.train, index);
        std::ofstream(dir / "table.md") << table.to_markdown();
        std::ofstream(dir / "table.csv") << table.to_csv();
        err << table.to_markdown();
        out << dir.string() << "\n";
        return kSuccess;
      }
      Model model = Model::build(rc.model);
      TrainOptions opts;
      opts.checkpoint_dir = dir;
      opts.patch_mode_eval = rc.patch_eval;
      const std::size_t total = rc.train.epochs;
      opts.on_epoch = [&err, total](const EpochRecord& e) {
        char line[160];
        std::snprintf(line, sizeof line, "epoch %zu/%zu lr %.6g loss %.6f val mean IoU %.4f\n",
                      e.epoch, total, e.lr, e.train_loss, e.validation.mean_iou);
        err << line << std::flush;
      };
      const TrainResult r = train(model, index, rc.train, opts);
      err << "best validation mean IoU " << fmt(r.best_mean_iou) << " at epoch " << r.best_epoch << "\n";
      out << dir.string() << "\n";
      return kSuccess;
    }

    if (*predict) {
      bool model_given = false;
      for (const char* name : {"--depth", "--base-channels", "--block-style", "--expansion"}) {
        model_given = model_given || predict->get_option(name)->count() > 0;
      }
      Model model = load_weights(weights);
      if (model_given) {
        UNetConfig expected = model.config();
        expected.depth = pm.depth;
        expected.base_channels = pm.base_channels;
        expected.block_style = parse_block_style(predict_style);
        expected.expansion = pm.expansion;
        const UNetConfig& got = model.config();
        if (got.depth != expected.depth || got.base_channels != expected.base_channels ||
            got.block_style != expected.block_style || got.expansion != expected.expansion) {
          throw ConfigError("weights " + weights.string() + " hold " + serialize_config(got) +
                            " but the configuration asks for " + serialize_config(expected));
        }
      }
      if (predict_size % model.config().required_divisor() != 0) {
        throw ConfigError("image size " + std::to_string(predict_size) + " is not a multiple of " +
                          std::to_string(model.config().required_divisor()));
      }
      const DatasetIndex index = ingest(predict_data);
      std::vector<std::array<BinaryMask, kNumClasses>> masks;
      masks.reserve(index.records.size());
      for (const auto& r : index.records) {
        masks.push_back(predict_masks(model, load_image(r), predict_size, patch));
      }
      write_predictions(index.records, masks, predict_out);
      out << "wrote " << 3 * index.records.size() << " rows to " << predict_out.string() << "\n";
      return kSuccess;
    }

    if (*eval) {
      const DatasetIndex index = ingest(eval_data);
      const PredictionMap pred = load_rows(eval_pred);
      const PredictionMap truth = load_rows(eval_truth);
      std::vector<std::string> problems;
      for (const auto& id : missing_ids(truth, pred)) problems.push_back(id + " missing from " + eval_pred.string());
      for (const auto& id : missing_ids(pred, truth)) problems.push_back(id + " missing from " + eval_truth.string());
      for (const auto& [id, _] : truth.by_id) {
        if (!index.find(id)) problems.push_back(id + " has no slice image under " + eval_data.string());
      }
      if (!problems.empty()) {
        std::string msg = "prediction and truth ids do not match:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw DataError(msg, problems);
      }
      MetricAccumulator acc;
      for (const auto& r : index.records) {
        auto t = truth.by_id.find(r.id());
        if (t == truth.by_id.end()) continue;
        const auto& p = pred.by_id.at(r.id());
        std::array<double, kNumClasses> ious{};
        for (std::size_t k = 0; k < kNumClasses; ++k) {
          const BinaryMask pm_k = decode_rle(p[k] ? *p[k] : "", r.height, r.width);
          const BinaryMask tm_k = decode_rle(t->second[k] ? *t->second[k] : "", r.height, r.width);
          ious[k] = iou_hard(pm_k, tm_k);
        }
        acc.add(ious);
      }
      const MetricReport report = acc.report(0, Split::Validation);
      print_report(report, out);
      if (!eval_out.empty()) {
        std::ofstream os(eval_out, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot write " + eval_out.string(), {eval_out.string()});
        os << report_csv(report);
      }
      return kSuccess;
    }

    if (*rle_dec) {
      if (!rle_dec->get_option("rle")->count()) rle_text = read_all(std::cin);
      const BinaryMask m = decode_rle(rle_text, rle_h, rle_w);
      std::string bits;
      for (auto v : m.values) bits.push_back(v ? '1' : '0');
      out << bits << "\n";
      return kSuccess;
    }

    if (*rle_enc) {
      if (!rle_enc->get_option("bitmap")->count()) rle_text = read_all(std::cin);
      std::vector<std::uint8_t> bits;
      for (char c : rle_text) {
        if (c == '0' || c == '1') {
          bits.push_back(static_cast<std::uint8_t>(c - '0'));
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
          throw DataError(std::string("bitmap may contain only 0, 1 and whitespace, found '") + c + "'");
        }
      }
      if (bits.empty()) throw DataError("empty bitmap");
      std::size_t h = rle_h, w = rle_w;
      if (h == 0 && w == 0) {
        h = 1;
        w = bits.size();
      } else if (h == 0) {
        h = w ? bits.size() / w : 0;
      } else if (w == 0) {
        w = bits.size() / h;
      }
      if (h * w != bits.size()) {
        throw DataError("bitmap has " + std::to_string(bits.size()) + " pixels, expected " +
                        dims_str(h, w));
      }
      out << encode_rle(BinaryMask(h, w, std::move(bits))) << "\n";
      return kSuccess;
    }

    if (*curves) {
      if (!run_names.empty() && run_names.size() != histories.size()) {
        throw ConfigError("--names needs one label per history file");
      }
      std::ostringstream os;
      os << "run,epoch,metric,value\n";
      for (std::size_t i = 0; i < histories.size(); ++i) {
        const fs::path& p = histories[i];
        std::string name = !run_names.empty() ? run_names[i]
                           : p.filename() == "history.csv" && p.has_parent_path()
                               ? p.parent_path().filename().string()
                               : p.stem().string();
        const EpochHistory h = EpochHistory::read_csv(p);
        for (const auto& e : h.epochs) {
          const std::string prefix = name + "," + std::to_string(e.epoch) + ",";
          os << prefix << "lr," << fmt(e.lr) << "\n";
          os << prefix << "train_loss," << fmt(e.train_loss) << "\n";
          for (std::size_t k = 0; k < kNumClasses; ++k) {
            os << prefix << "iou_" << kClassNames[k] << "," << fmt(e.validation.per_class_iou[k]) << "\n";
          }
          os << prefix << "mean_iou," << fmt(e.validation.mean_iou) << "\n";
        }
      }
      if (curves_out.empty()) {
        out << os.str();
      } else {
        std::ofstream f(curves_out, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write " + curves_out.string(), {curves_out.string()});
        f << os.str();
      }
      return kSuccess;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kDivergence;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsageError;
}

}  // namespace tractseg::cli
