#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lsp/assignment.hpp"
#include "lsp/criterion.hpp"
#include "lsp/decoder.hpp"
#include "lsp/errors.hpp"
#include "lsp/geometry.hpp"
#include "lsp/io.hpp"
#include "lsp/metrics.hpp"
#include "lsp/postprocess.hpp"
#include "lsp/radial_bounds.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Size {
  int height = 0;
  int width = 0;
};

Size parse_size(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw UsageError("");
    std::size_t used_h = 0, used_w = 0;
    const std::string hs = text.substr(0, x), ws = text.substr(x + 1);
    Size s{std::stoi(hs, &used_h), std::stoi(ws, &used_w)};
    if (used_h != hs.size() || used_w != ws.size() || s.height < 1 || s.width < 1) throw UsageError("");
    return s;
  } catch (const std::exception&) {
    throw UsageError("--size expects HxW with positive integers, got '" + text + "'");
  }
}

json header(const std::string& command, std::uint64_t seed,
            const std::vector<std::pair<std::string, fs::path>>& inputs) {
  json j;
  j["tool"] = "lspdetr";
  j["version"] = lsp::kToolVersion;
  j["command"] = command;
  j["seed"] = seed;
  j["inputs"] = json::object();
  for (const auto& [name, path] : inputs) {
    j["inputs"][name] = {{"path", path.string()}, {"sha256", lsp::sha256_file(path)}};
  }
  return j;
}

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

// Sorted distinct class names of the records, or "nucleus" when empty.
std::vector<std::string> record_vocabulary(const std::vector<lsp::PolygonRecord>& records) {
  std::set<std::string> names;
  for (const auto& r : records) names.insert(r.class_name);
  if (names.empty()) return {"nucleus"};
  return {names.begin(), names.end()};
}

lsp::PredictionSet to_predictions(const std::vector<lsp::PolygonRecord>& records,
                                  const std::vector<std::string>& vocabulary, int width,
                                  int height) {
  lsp::PredictionSet set;
  set.width = width;
  set.height = height;
  for (const auto& r : records) set.items.push_back(lsp::to_descriptor(r, vocabulary));
  return set;
}

std::uint32_t checked_id(std::uint64_t id) {
  if (id == 0 || id > 65535)
    throw lsp::ParseError(lsp::ParseErrorKind::kBadRecord,
                          "record id " + std::to_string(id) + " is not a valid label (1..65535)");
  return static_cast<std::uint32_t>(id);
}

lsp::InstanceStack to_stack(const std::vector<lsp::PolygonRecord>& records, Size size,
                            const std::vector<std::string>& vocabulary) {
  lsp::InstanceStack stack;
  stack.width = size.width;
  stack.height = size.height;
  stack.class_names = vocabulary;
  std::set<std::uint32_t> seen;
  for (const auto& r : records) {
    const auto id = checked_id(r.id);
    if (!seen.insert(id).second)
      throw lsp::ParseError(lsp::ParseErrorKind::kBadRecord,
                            "duplicate record id " + std::to_string(id));
    lsp::ShapeDescriptor d;
    d.p = r.p;
    d.r = r.r;
    stack.items.push_back({id, lsp::class_index_of(vocabulary, r.class_name), r.score,
                           lsp::rasterize(d, size.width, size.height)});
  }
  return stack;
}

// Later records paint over earlier ones.
lsp::LabelRaster paint(const lsp::InstanceStack& stack, double resolution) {
  lsp::LabelRaster out;
  out.width = stack.width;
  out.height = stack.height;
  out.resolution = resolution;
  out.class_names = stack.class_names;
  out.ids.assign(static_cast<std::size_t>(stack.width) * stack.height, 0);
  for (const auto& item : stack.items) {
    for (auto idx : item.mask.indices()) out.ids[idx] = item.id;
    out.instance_class[item.id] = item.class_index;
  }
  return out;
}

std::vector<lsp::PolygonRecord> read_records(const fs::path& path) {
  return lsp::read_polygons(path);
}

json assignment_json(const lsp::MatchResult& match, const lsp::LabelRaster& labels,
                     const std::vector<lsp::PolygonRecord>& records, const lsp::CostMatrix& costs) {
  const auto ids = labels.instance_ids();
  json pairs = json::array();
  for (std::size_t i = 0; i < match.row_to_col.size(); ++i) {
    const auto c = static_cast<std::size_t>(match.row_to_col[i]);
    pairs.push_back({{"gt_id", ids[i]}, {"pred_id", records[c].id}, {"cost", costs(i, c)}});
  }
  return pairs;
}

struct Loaded {
  lsp::LabelRaster labels;
  std::vector<lsp::PolygonRecord> records;
  lsp::GroundTruthSet gt;
  lsp::PredictionSet pred;
  lsp::BoundTables tables;
};

Loaded load_pair(const fs::path& labels_path, const fs::path& polygons_path) {
  Loaded l;
  l.labels = lsp::read_label_raster(labels_path);
  l.records = read_records(polygons_path);
  l.gt = lsp::GroundTruthSet::from_labels(l.labels);
  l.pred = to_predictions(l.records, l.labels.class_names, l.labels.width, l.labels.height);
  l.tables = lsp::build_tables(l.labels);
  return l;
}

lsp::InstanceSet instances_of(const lsp::LabelRaster& labels,
                              const std::vector<std::string>& vocabulary) {
  lsp::InstanceSet set;
  set.width = labels.width;
  set.height = labels.height;
  const auto ids = labels.instance_ids();
  set.masks = labels.instance_masks();
  for (auto id : ids) {
    const auto& name =
        labels.class_names.at(static_cast<std::size_t>(labels.instance_class.at(id)));
    set.classes.push_back(lsp::class_index_of(vocabulary, name));
  }
  return set;
}

bool has_extension(const fs::path& p, const std::string& ext) {
  auto e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ext;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw UsageError("empty entry in list '" + text + "'");
    out.push_back(item);
  }
  return out;
}

int error_exit(const std::string& type, const std::string& message, int code) {
  std::cerr << json{{"error", {{"type", type}, {"message", message}}}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Star-convex nucleus set prediction toolkit"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed for every random draw")->capture_default_str();

  // bounds
  auto* bounds = app.add_subcommand("bounds", "Build per-pixel radial bound tables");
  fs::path bounds_in, bounds_out;
  bounds->add_option("labels", bounds_in, "Label raster (.pgm)")->required();
  bounds->add_option("-o,--output", bounds_out, "Output table file")->required();

  // rasterize / resolve
  auto* rasterize = app.add_subcommand("rasterize", "Rasterize polygons to a label raster");
  auto* resolve = app.add_subcommand("resolve", "Rasterize and resolve overlaps by depth");
  fs::path poly_in, raster_out;
  std::string size_text;
  double resolution = 0.25;
  bool use_resolve = false;
  for (auto* cmd : {rasterize, resolve}) {
    cmd->add_option("polygons", poly_in, "Polygon records (.jsonl)")->required();
    cmd->add_option("--size", size_text, "Raster size HxW")->required();
    cmd->add_option("-o,--output", raster_out, "Output label raster (.pgm)")->required();
    cmd->add_option("--resolution", resolution, "Micrometres per pixel")->capture_default_str();
  }
  rasterize->add_flag("--resolve", use_resolve, "Resolve overlaps instead of painting");

  // match / loss
  auto* match = app.add_subcommand("match", "Matching cost matrix and optimal assignment");
  auto* loss = app.add_subcommand("loss", "Set-prediction loss breakdown");
  fs::path labels_in, preds_in;
  lsp::CriterionConfig criterion;
  bool fixed_boundary = false;
  for (auto* cmd : {match, loss}) {
    cmd->add_option("labels", labels_in, "Ground-truth label raster (.pgm)")->required();
    cmd->add_option("polygons", preds_in, "Predictions (.jsonl)")->required();
    cmd->add_option("--lambda", criterion.lambda, "Inner-mask penalty")->capture_default_str();
    cmd->add_option("--alpha", criterion.alpha, "Focal alpha")->capture_default_str();
    cmd->add_option("--gamma", criterion.gamma, "Focal gamma")->capture_default_str();
    cmd->add_flag("--fixed-boundary", fixed_boundary, "Use r_max = r_min");
  }

  // eval
  auto* eval = app.add_subcommand("eval", "Panoptic quality report");
  fs::path eval_gt, eval_pred;
  bool masked = false;
  std::string mode_text = "macro";
  eval->add_option("gt", eval_gt, "Ground-truth label raster (.pgm)")->required();
  eval->add_option("pred", eval_pred, "Prediction raster (.pgm) or polygons (.jsonl)")->required();
  eval->add_flag("--masked", masked, "Headline figures use masked IoU");
  eval->add_option("--mode", mode_text, "micro or macro")
      ->check(CLI::IsMember({"micro", "macro"}))
      ->capture_default_str();

  // detect-eval
  auto* detect = app.add_subcommand("detect-eval", "Centroid detection precision/recall/F1");
  fs::path det_gt, det_pred;
  double radius_um = 3.0;
  detect->add_option("gt", det_gt, "Ground-truth label raster (.pgm)")->required();
  detect->add_option("pred", det_pred, "Predictions (.jsonl)")->required();
  detect->add_option("--radius-um", radius_um, "Match radius in micrometres")->capture_default_str();

  // forward
  auto* fwd = app.add_subcommand("forward", "Run the decoder on the stub backbone");
  fs::path fwd_image, fwd_out;
  int synthetic = 0;
  double tau = 0.5;
  double fwd_resolution = 0.25;
  std::string classes_text = "nucleus";
  auto* image_opt = fwd->add_option("image", fwd_image, "Input image (.ppm/.pgm, square)");
  auto* synth_opt = fwd->add_option("--synthetic", synthetic, "Synthetic image side");
  image_opt->excludes(synth_opt);
  synth_opt->excludes(image_opt);
  fwd->add_option("--seed", seed, "Seed for weights and synthetic input")->capture_default_str();
  fwd->add_option("--tau", tau, "Score threshold")->capture_default_str();
  fwd->add_option("--resolution", fwd_resolution, "Micrometres per pixel")->capture_default_str();
  fwd->add_option("--classes", classes_text, "Comma-separated class vocabulary")
      ->capture_default_str();
  fwd->add_option("-o,--output", fwd_out, "Output polygons (.jsonl); stdout when absent");
  bool all_queries = false;
  fwd->add_flag("--all-queries", all_queries, "Emit every query of the last layer, unfiltered");

  // bench
  auto* bench = app.add_subcommand("bench", "Decoder forward-time scaling");
  std::string sides_text = "256,512,1024";
  int repeats = 1;
  bench->add_option("--sides", sides_text, "Comma-separated image sides")->capture_default_str();
  bench->add_option("--seed", seed, "Seed for weights and inputs")->capture_default_str();
  bench->add_option("--repeats", repeats, "Timed runs per side (minimum kept)")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return error_exit("usage", e.what(), 64);
  }

  try {
    if (*bounds) {
      const auto labels = lsp::read_label_raster(bounds_in);
      const auto tables = lsp::build_tables(labels);
      lsp::write_tables(tables, bounds_out);
      std::size_t infinite = 0;
      for (float v : tables.upper_data()) infinite += std::isinf(v) ? 1 : 0;
      json j = header("bounds", seed, {{"labels", bounds_in}});
      j["output"] = {{"path", bounds_out.string()}, {"sha256", lsp::sha256_file(bounds_out)}};
      j["width"] = tables.width();
      j["height"] = tables.height();
      j["rays"] = lsp::kRayCount;
      j["foreground_pixels"] = labels.foreground().area();
      j["infinite_upper_entries"] = infinite;
      emit(j);
    } else if (*rasterize || *resolve) {
      const Size size = parse_size(size_text);
      const auto records = read_records(poly_in);
      const auto stack = to_stack(records, size, record_vocabulary(records));
      const bool by_depth = *resolve || use_resolve;
      const auto labels = by_depth ? lsp::resolve_overlaps(stack, resolution) : paint(stack, resolution);
      lsp::write_label_raster(labels, raster_out);
      json j = header(*resolve ? "resolve" : "rasterize", seed, {{"polygons", poly_in}});
      j["overlaps"] = by_depth ? "depth" : "painter";
      j["output"] = {{"path", raster_out.string()}, {"sha256", lsp::sha256_file(raster_out)}};
      j["instances"] = labels.instance_ids().size();
      emit(j);
    } else if (*match || *loss) {
      auto data = load_pair(labels_in, preds_in);
      if (fixed_boundary) data.tables = lsp::fixed_boundary_mode(data.tables);
      const auto costs = lsp::matching_cost_matrix(data.gt, data.pred, data.tables, criterion);
      const auto result = lsp::solve(costs);
      json j = header(*match ? "match" : "loss", seed,
                      {{"labels", labels_in}, {"polygons", preds_in}});
      j["config"] = {{"lambda", criterion.lambda},
                     {"alpha", criterion.alpha},
                     {"gamma", criterion.gamma},
                     {"fixed_boundary", fixed_boundary}};
      if (*match) {
        double lo = 0, hi = 0, sum = 0;
        if (!costs.data().empty()) {
          lo = *std::min_element(costs.data().begin(), costs.data().end());
          hi = *std::max_element(costs.data().begin(), costs.data().end());
          for (double v : costs.data()) sum += v;
        }
        j["cost_matrix"] = {{"rows", costs.rows()},
                            {"cols", costs.cols()},
                            {"min", lo},
                            {"max", hi},
                            {"mean", costs.data().empty() ? 0.0 : sum / costs.data().size()}};
        j["total_cost"] = result.total_cost;
        j["assignment"] = assignment_json(result, data.labels, data.records, costs);
        json unmatched = json::array();
        for (int c : result.unmatched_cols) unmatched.push_back(data.records[static_cast<std::size_t>(c)].id);
        j["unmatched_pred_ids"] = unmatched;
      } else {
        j["loss"] = lsp::to_json(lsp::total_loss(data.gt, data.pred, data.tables, result, criterion));
        j["assignment"] = assignment_json(result, data.labels, data.records, costs);
      }
      emit(j);
    } else if (*eval) {
      const auto gt_labels = lsp::read_label_raster(eval_gt);
      const auto& vocabulary = gt_labels.class_names;
      const auto gt = instances_of(gt_labels, vocabulary);
      lsp::InstanceSet pred;
      if (has_extension(eval_pred, ".jsonl")) {
        const auto records = read_records(eval_pred);
        const auto stack = to_stack(records, {gt_labels.height, gt_labels.width}, vocabulary);
        pred.width = gt_labels.width;
        pred.height = gt_labels.height;
        for (const auto& item : stack.items) {
          pred.masks.push_back(item.mask);
          pred.classes.push_back(item.class_index);
        }
      } else {
        const auto pred_labels = lsp::read_label_raster(eval_pred);
        if (pred_labels.width != gt_labels.width || pred_labels.height != gt_labels.height)
          throw std::invalid_argument("prediction raster size differs from the ground truth");
        pred = instances_of(pred_labels, vocabulary);
      }
      const auto mode = lsp::parse_aggregation_mode(mode_text);
      const auto ev = lsp::evaluate_image(gt, pred, static_cast<int>(vocabulary.size()));
      const auto report = lsp::aggregate(std::span(&ev, 1), mode);
      json j = header("eval", seed, {{"gt", eval_gt}, {"pred", eval_pred}});
      j["report"] = lsp::to_json(report, vocabulary);
      j["headline_iou"] = masked ? "masked" : "plain";
      const auto& r = j["report"];
      j["headline"] = {{"mPQ", masked ? r["mMPQ"] : r["mPQ"]}, {"bPQ", masked ? r["bMPQ"] : r["bPQ"]}};
      emit(j);
    } else if (*detect) {
      const auto gt_labels = lsp::read_label_raster(det_gt);
      const auto records = read_records(det_pred);
      std::vector<lsp::Vec2> gt_c, pred_c;
      std::vector<double> scores;
      for (const auto& m : gt_labels.instance_masks()) gt_c.push_back(lsp::centroid(m));
      for (const auto& r : records) {
        lsp::ShapeDescriptor d;
        d.p = r.p;
        d.r = r.r;
        const auto mask = lsp::rasterize(d, gt_labels.width, gt_labels.height);
        pred_c.push_back(mask.empty() ? lsp::to_pixels(r.p, gt_labels.width, gt_labels.height)
                                      : lsp::centroid(mask));
        scores.push_back(r.score);
      }
      const auto report =
          lsp::detection_match(gt_c, pred_c, scores, gt_labels.resolution, radius_um);
      json j = header("detect-eval", seed, {{"gt", det_gt}, {"pred", det_pred}});
      j["report"] = lsp::to_json(report);
      j["resolution_um_per_px"] = gt_labels.resolution;
      emit(j);
    } else if (*fwd) {
      if (fwd_image.empty() && synthetic == 0) throw UsageError("forward needs an image or --synthetic SIZE");
      const auto vocabulary = split_list(classes_text);
      lsp::DecoderConfig config;
      config.num_classes = static_cast<int>(vocabulary.size());
      config.score_threshold = tau;
      const auto params = lsp::DecoderParams::random(config, seed);
      const lsp::Image image =
          synthetic ? lsp::synthetic_image(synthetic, seed) : lsp::read_image(fwd_image);
      const auto result = lsp::forward(image, params, fwd_resolution);
      const auto& emitted = all_queries ? result.layers.back() : result.predictions;
      std::ostringstream lines;
      for (std::size_t i = 0; i < emitted.items.size(); ++i) {
        lines << lsp::format_polygon(lsp::to_record(emitted.items[i], i + 1, vocabulary)) << "\n";
      }
      if (fwd_out.empty()) {
        std::cout << lines.str();
      } else {
        {
          std::ofstream out(fwd_out, std::ios::binary);
          if (!out) throw lsp::ParseError(lsp::ParseErrorKind::kIo, "cannot write " + fwd_out.string());
          out << lines.str();
        }
        std::vector<std::pair<std::string, fs::path>> inputs;
        if (!fwd_image.empty()) inputs.push_back({"image", fwd_image});
        json j = header("forward", seed, inputs);
        if (synthetic) j["synthetic_side"] = synthetic;
        j["tau"] = tau;
        j["resolution_um_per_px"] = fwd_resolution;
        j["classes"] = vocabulary;
        j["queries"] = result.grid.size();
        j["grid_cells_per_side"] = result.grid.cells;
        j["s"] = result.grid.s;
        j["kept"] = result.predictions.items.size();
        j["all_queries"] = all_queries;
        j["emitted"] = emitted.items.size();
        j["output"] = {{"path", fwd_out.string()}, {"sha256", lsp::sha256_file(fwd_out)}};
        std::ofstream meta(fwd_out.string() + ".meta.json");
        meta << j.dump(2) << "\n";
        emit(j);
      }
    } else if (*bench) {
      std::vector<int> sides;
      for (const auto& s : split_list(sides_text)) {
        try {
          sides.push_back(std::stoi(s));
        } catch (const std::exception&) {
          throw UsageError("bad side '" + s + "'");
        }
      }
      const auto params = lsp::DecoderParams::random(lsp::DecoderConfig{}, seed);
      const auto report = lsp::bench_scaling(sides, params, 0.25, repeats);
      json j = header("bench", seed, {});
      j["entries"] = json::array();
      for (const auto& e : report.entries) {
        j["entries"].push_back({{"side", e.side},
                                {"pixels", e.pixels},
                                {"queries", e.queries},
                                {"feature_tokens", e.feature_tokens},
                                {"seconds", e.seconds}});
      }
      j["exponent"] = report.entries.size() >= 2 ? json(report.exponent) : json(nullptr);
      emit(j);
    }
  } catch (const UsageError& e) {
    return error_exit("usage", e.what(), 64);
  } catch (const lsp::ParseError& e) {
    return error_exit(std::string("parse.") + lsp::to_string(e.kind()), e.what(), 65);
  } catch (const std::invalid_argument& e) {
    return error_exit("invalid_argument", e.what(), 1);
  } catch (const std::exception& e) {
    return error_exit("runtime", e.what(), 1);
  }
  return 0;
}
