#include "lsp/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <set>
#include <sstream>

#include "lsp/errors.hpp"

namespace lsp {

using nlohmann::json;

std::filesystem::path sidecar_path(const std::filesystem::path& raster) {
  auto out = raster;
  out.replace_extension(".json");
  return out;
}

namespace {

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(ParseErrorKind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct PnmHeader {
  std::string magic;
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(const std::string& bytes, const std::string& name) {
  PnmHeader h;
  std::size_t pos = 0;
  auto bad = [&](const std::string& why) {
    return ParseError(ParseErrorKind::kMalformedHeader, name + ": " + why);
  };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    const std::size_t begin = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos == begin || pos - begin > 9) throw bad(std::string("bad ") + what);
    return std::stoi(bytes.substr(begin, pos - begin));
  };
  if (bytes.size() < 2 || bytes[0] != 'P') throw bad("missing magic number");
  h.magic = bytes.substr(0, 2);
  pos = 2;
  h.width = number("width");
  h.height = number("height");
  h.maxval = number("maxval");
  if (h.width < 1 || h.height < 1) throw bad("empty raster");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw bad("missing whitespace before the samples");
  h.data_offset = pos + 1;
  return h;
}

json load_json(const std::filesystem::path& path, ParseErrorKind missing, ParseErrorKind bad) {
  std::ifstream in(path);
  if (!in) throw ParseError(missing, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(bad, path.string() + ": " + e.what());
  }
}

}  // namespace

LabelRaster read_label_raster(const std::filesystem::path& path) {
  const std::string bytes = read_bytes(path);
  const PnmHeader h = parse_pnm_header(bytes, path.string());
  if (h.magic != "P5")
    throw ParseError(ParseErrorKind::kMalformedHeader, path.string() + ": expected P5");
  if (h.maxval != 65535)
    throw ParseError(ParseErrorKind::kUnsupportedMaxval,
                     path.string() + ": maxval " + std::to_string(h.maxval) + ", expected 65535");
  const std::size_t n = static_cast<std::size_t>(h.width) * static_cast<std::size_t>(h.height);
  if (bytes.size() - h.data_offset < 2 * n)
    throw ParseError(ParseErrorKind::kTruncated, path.string() + ": truncated sample data");

  LabelRaster labels;
  labels.width = h.width;
  labels.height = h.height;
  labels.ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto hi = static_cast<unsigned char>(bytes[h.data_offset + 2 * i]);
    const auto lo = static_cast<unsigned char>(bytes[h.data_offset + 2 * i + 1]);
    labels.ids[i] = (static_cast<std::uint32_t>(hi) << 8) | lo;
  }

  const auto side = sidecar_path(path);
  if (!std::filesystem::exists(side))
    throw ParseError(ParseErrorKind::kMissingSidecar, "missing sidecar " + side.string());
  const json meta = load_json(side, ParseErrorKind::kMissingSidecar, ParseErrorKind::kBadSidecar);
  auto bad = [&](const std::string& why) {
    return ParseError(ParseErrorKind::kBadSidecar, side.string() + ": " + why);
  };
  if (!meta.is_object()) throw bad("expected an object");
  if (!meta.contains("resolution_um_per_px") || !meta["resolution_um_per_px"].is_number())
    throw bad("resolution_um_per_px missing");
  labels.resolution = meta["resolution_um_per_px"].get<double>();
  if (!(labels.resolution > 0.0) || !std::isfinite(labels.resolution))
    throw bad("resolution must be positive");
  if (!meta.contains("classes") || !meta["classes"].is_object()) throw bad("classes map missing");

  std::map<std::uint32_t, std::string> names;
  for (const auto& [key, value] : meta["classes"].items()) {
    if (!value.is_string()) throw bad("class of id " + key + " is not a string");
    std::size_t used = 0;
    unsigned long id = 0;
    try {
      id = std::stoul(key, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != key.size() || id == 0 || id > 65535) throw bad("invalid instance id '" + key + "'");
    names[static_cast<std::uint32_t>(id)] = value.get<std::string>();
  }
  if (meta.contains("vocabulary")) {
    if (!meta["vocabulary"].is_array()) throw bad("vocabulary must be an array");
    for (const auto& v : meta["vocabulary"]) {
      if (!v.is_string()) throw bad("vocabulary entries must be strings");
      labels.class_names.push_back(v.get<std::string>());
    }
    if (std::set<std::string>(labels.class_names.begin(), labels.class_names.end()).size() !=
        labels.class_names.size())
      throw bad("duplicate vocabulary entry");
  } else {
    std::set<std::string> distinct;
    for (const auto& [id, name] : names) distinct.insert(name);
    labels.class_names.assign(distinct.begin(), distinct.end());
    if (labels.class_names.empty()) labels.class_names = {"nucleus"};
  }
  for (const auto& [id, name] : names) {
    const auto it = std::find(labels.class_names.begin(), labels.class_names.end(), name);
    if (it == labels.class_names.end()) throw bad("class '" + name + "' not in the vocabulary");
    labels.instance_class[id] = static_cast<int>(it - labels.class_names.begin());
  }
  for (auto id : labels.instance_ids()) {
    if (!labels.instance_class.count(id))
      throw ParseError(ParseErrorKind::kUnknownInstanceClass,
                       path.string() + ": instance " + std::to_string(id) + " has no class");
  }
  return labels;
}

void write_label_raster(const LabelRaster& labels, const std::filesystem::path& path) {
  labels.validate();
  std::string out = "P5\n" + std::to_string(labels.width) + " " + std::to_string(labels.height) +
                    "\n65535\n";
  out.reserve(out.size() + 2 * labels.ids.size());
  for (auto id : labels.ids) {
    if (id > 65535) throw std::invalid_argument("label id exceeds 65535");
    out.push_back(static_cast<char>(id >> 8));
    out.push_back(static_cast<char>(id & 0xff));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError(ParseErrorKind::kIo, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));

  json meta;
  meta["resolution_um_per_px"] = labels.resolution;
  meta["classes"] = json::object();
  for (const auto& [id, cls] : labels.instance_class) {
    meta["classes"][std::to_string(id)] = labels.class_names.at(static_cast<std::size_t>(cls));
  }
  meta["vocabulary"] = labels.class_names;
  std::ofstream side(sidecar_path(path));
  if (!side) throw ParseError(ParseErrorKind::kIo, "cannot write " + sidecar_path(path).string());
  side << meta.dump(2) << "\n";
}

namespace {

PolygonRecord parse_record(const std::string& line, std::size_t line_no) {
  auto bad = [&](const std::string& why) {
    return ParseError(ParseErrorKind::kBadRecord, "line " + std::to_string(line_no) + ": " + why);
  };
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw bad(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw bad("expected an object");
  for (const char* key : {"id", "class", "score", "p", "r"}) {
    if (!j.contains(key)) throw bad(std::string("missing key '") + key + "'");
  }
  PolygonRecord rec;
  if (!j["id"].is_number_unsigned()) throw bad("id must be a non-negative integer");
  rec.id = j["id"].get<std::uint64_t>();
  if (!j["class"].is_string()) throw bad("class must be a string");
  rec.class_name = j["class"].get<std::string>();
  if (!j["score"].is_number()) throw bad("score must be a number");
  rec.score = j["score"].get<double>();
  if (!(rec.score >= 0.0 && rec.score <= 1.0)) throw bad("score outside [0, 1]");
  const auto& p = j["p"];
  if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
    throw bad("p must hold two numbers");
  rec.p = {p[0].get<double>(), p[1].get<double>()};
  if (!(rec.p.x >= 0.0 && rec.p.x <= 1.0 && rec.p.y >= 0.0 && rec.p.y <= 1.0))
    throw bad("p outside [0, 1]");
  const auto& r = j["r"];
  if (!r.is_array()) throw bad("r must be an array");
  if (r.size() != static_cast<std::size_t>(kRayCount))
    throw bad("expected " + std::to_string(kRayCount) + " radii, got " + std::to_string(r.size()));
  for (int k = 0; k < kRayCount; ++k) {
    if (!r[k].is_number()) throw bad("radii must be numbers");
    rec.r[k] = r[k].get<double>();
    if (!(rec.r[k] > 0.0) || !std::isfinite(rec.r[k])) throw bad("radii must be positive and finite");
  }
  if (j.contains("logits")) {
    const auto& l = j["logits"];
    if (!l.is_array() || l.size() < 2) throw bad("logits must be an array of at least 2 numbers");
    std::vector<double> logits;
    for (const auto& v : l) {
      if (!v.is_number()) throw bad("logits must be numbers");
      logits.push_back(v.get<double>());
      if (!std::isfinite(logits.back())) throw bad("logits must be finite");
    }
    rec.logits = std::move(logits);
  }
  return rec;
}

}  // namespace

std::vector<PolygonRecord> parse_polygons(std::istream& in) {
  std::vector<PolygonRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }))
      continue;
    out.push_back(parse_record(line, line_no));
  }
  return out;
}

std::vector<PolygonRecord> read_polygons(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(ParseErrorKind::kIo, "cannot open " + path.string());
  try {
    return parse_polygons(in);
  } catch (const ParseError& e) {
    throw ParseError(e.kind(), path.string() + ": " + e.what());
  }
}

std::string format_polygon(const PolygonRecord& record) {
  json j;
  j["id"] = record.id;
  j["class"] = record.class_name;
  j["score"] = record.score;
  j["p"] = {record.p.x, record.p.y};
  j["r"] = std::vector<double>(record.r.begin(), record.r.end());
  if (record.logits) j["logits"] = *record.logits;
  return j.dump();
}

void write_polygons(const std::vector<PolygonRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(ParseErrorKind::kIo, "cannot write " + path.string());
  for (const auto& rec : records) out << format_polygon(rec) << "\n";
}

int class_index_of(const std::vector<std::string>& vocabulary, const std::string& name) {
  const auto it = std::find(vocabulary.begin(), vocabulary.end(), name);
  if (it == vocabulary.end())
    throw ParseError(ParseErrorKind::kUnknownInstanceClass, "unknown class '" + name + "'");
  return static_cast<int>(it - vocabulary.begin());
}

namespace {

double logit(double q) {
  q = std::clamp(q, 1e-12, 1.0 - 1e-12);
  return std::log(q) - std::log1p(-q);
}

}  // namespace

ShapeDescriptor to_descriptor(const PolygonRecord& record,
                              const std::vector<std::string>& vocabulary) {
  ShapeDescriptor d;
  d.p = record.p;
  d.r = record.r;
  d.score = record.score;
  const int cls = class_index_of(vocabulary, record.class_name);
  if (record.logits) {
    if (record.logits->size() != vocabulary.size() + 1)
      throw ParseError(ParseErrorKind::kBadRecord,
                       "record " + std::to_string(record.id) + ": logits do not match the " +
                           std::to_string(vocabulary.size()) + "-class vocabulary");
    d.class_logits = *record.logits;
  } else {
    d.class_logits.assign(vocabulary.size() + 1, logit(1.0 - record.score));
    d.class_logits[static_cast<std::size_t>(cls)] = logit(record.score);
  }
  return d;
}

PolygonRecord to_record(const ShapeDescriptor& d, std::uint64_t id,
                        const std::vector<std::string>& vocabulary) {
  if (d.class_logits.size() != vocabulary.size() + 1)
    throw std::invalid_argument("to_record: logits do not match the vocabulary");
  PolygonRecord rec;
  rec.id = id;
  const auto best = std::max_element(d.class_logits.begin(), d.class_logits.end() - 1);
  rec.class_name = vocabulary[static_cast<std::size_t>(best - d.class_logits.begin())];
  rec.score = d.score;
  rec.p = d.p;
  rec.r = d.r;
  rec.logits = d.class_logits;
  return rec;
}

Image read_image(const std::filesystem::path& path) {
  const std::string bytes = read_bytes(path);
  const PnmHeader h = parse_pnm_header(bytes, path.string());
  if (h.magic != "P5" && h.magic != "P6")
    throw ParseError(ParseErrorKind::kMalformedHeader, path.string() + ": expected P5 or P6");
  if (h.maxval < 1 || h.maxval > 65535)
    throw ParseError(ParseErrorKind::kUnsupportedMaxval, path.string() + ": bad maxval");
  const int in_channels = h.magic == "P6" ? 3 : 1;
  const std::size_t sample_bytes = h.maxval > 255 ? 2 : 1;
  const std::size_t n = static_cast<std::size_t>(h.width) * static_cast<std::size_t>(h.height);
  if (bytes.size() - h.data_offset < n * in_channels * sample_bytes)
    throw ParseError(ParseErrorKind::kTruncated, path.string() + ": truncated sample data");
  Image img;
  img.width = h.width;
  img.height = h.height;
  img.data.resize(n * 3);
  const auto* src = reinterpret_cast<const unsigned char*>(bytes.data() + h.data_offset);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      const std::size_t s = (i * in_channels + (in_channels == 3 ? c : 0)) * sample_bytes;
      const unsigned v = sample_bytes == 2 ? (unsigned(src[s]) << 8) | src[s + 1] : src[s];
      img.data[i * 3 + c] = static_cast<double>(v) / h.maxval;
    }
  }
  return img;
}

std::string sha256_file(const std::filesystem::path& path) {
  const std::string bytes = read_bytes(path);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 failed");
  std::ostringstream hex;
  for (unsigned i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

json to_json(const LossBreakdown& loss) {
  json j{{"classification", loss.classification},
         {"point", loss.point},
         {"radial", loss.radial},
         {"total", loss.total}};
  if (!loss.layers.empty()) {
    j["layers"] = json::array();
    for (const auto& l : loss.layers) j["layers"].push_back(to_json(l));
  }
  return j;
}

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json quality_json(const PqCounts& c, const std::optional<Quality>& q) {
  json j{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
  if (q) {
    j["sq"] = q->sq;
    j["rq"] = q->rq;
    j["pq"] = q->pq;
  } else {
    j["sq"] = j["rq"] = j["pq"] = nullptr;
  }
  return j;
}

}  // namespace

json to_json(const PanopticReport& report, const std::vector<std::string>& class_names) {
  json j;
  j["mode"] = to_string(report.mode);
  j["images"] = report.images;
  j["mPQ"] = optional_number(report.mpq);
  j["bPQ"] = optional_number(report.bpq);
  j["mMPQ"] = optional_number(report.mmpq);
  j["bMPQ"] = optional_number(report.bmpq);
  j["classes"] = json::array();
  for (std::size_t c = 0; c < report.classes.size(); ++c) {
    const auto& cls = report.classes[c];
    j["classes"].push_back({{"name", c < class_names.size() ? class_names[c] : std::to_string(c)},
                            {"iou", quality_json(cls.counts, cls.quality)},
                            {"masked_iou", quality_json(cls.masked_counts, cls.masked_quality)}});
  }
  j["binary"] = {{"iou", quality_json(report.binary.counts, report.binary.quality)},
                 {"masked_iou",
                  quality_json(report.binary.masked_counts, report.binary.masked_quality)}};
  return j;
}

json to_json(const DetectionReport& report) {
  return {{"precision", report.precision}, {"recall", report.recall}, {"f1", report.f1},
          {"tp", report.tp},               {"fp", report.fp},         {"fn", report.fn},
          {"radius_um", report.radius_um}, {"radius_px", report.radius_px}};
}

}  // namespace lsp
