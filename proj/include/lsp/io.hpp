#pragma once

// File formats: 16-bit PGM label rasters with a JSON sidecar, JSON Lines
// polygon records, 8/16-bit PNM images, and JSON views of the reports.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsp/criterion.hpp"
#include "lsp/geometry.hpp"
#include "lsp/image.hpp"
#include "lsp/metrics.hpp"
#include "lsp/radial_bounds.hpp"

namespace lsp {

inline constexpr const char* kToolVersion = "0.1.0";

// foo/bar.pgm -> foo/bar.json
std::filesystem::path sidecar_path(const std::filesystem::path& raster);

// P5, maxval 65535, big-endian samples, plus the sidecar:
//   {"resolution_um_per_px": 0.25, "classes": {"1": "neoplastic", ...},
//    "vocabulary": ["neoplastic", ...]}
// Without "vocabulary" the class indices follow the sorted distinct names.
// Throws ParseError with a kind per failure.
LabelRaster read_label_raster(const std::filesystem::path& path);
// Ids above 65535 are rejected with std::invalid_argument.
void write_label_raster(const LabelRaster& labels, const std::filesystem::path& path);

struct PolygonRecord {
  std::uint64_t id = 0;
  std::string class_name = "nucleus";
  double score = 0.0;
  Vec2 p;
  Radii r{};
  std::optional<std::vector<double>> logits;  // K + 1 slots when present

  friend bool operator==(const PolygonRecord&, const PolygonRecord&) = default;
};

// One JSON object per line with keys id, class, score, p, r and optionally
// logits. Blank lines are skipped. Errors carry the 1-based line number.
std::vector<PolygonRecord> read_polygons(const std::filesystem::path& path);
std::vector<PolygonRecord> parse_polygons(std::istream& in);
void write_polygons(const std::vector<PolygonRecord>& records, const std::filesystem::path& path);
std::string format_polygon(const PolygonRecord& record);

// Class index of `name` in `vocabulary`; ParseError(kUnknownInstanceClass)
// when absent.
int class_index_of(const std::vector<std::string>& vocabulary, const std::string& name);

// Logits come from the record when present; otherwise the record's class
// slot gets logit(score) and every other slot logit(1 - score).
ShapeDescriptor to_descriptor(const PolygonRecord& record,
                              const std::vector<std::string>& vocabulary);
PolygonRecord to_record(const ShapeDescriptor& d, std::uint64_t id,
                        const std::vector<std::string>& vocabulary);

// P5 (gray, replicated to RGB) or P6, any maxval up to 65535, scaled to [0,1].
Image read_image(const std::filesystem::path& path);

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

nlohmann::json to_json(const LossBreakdown& loss);
nlohmann::json to_json(const PanopticReport& report, const std::vector<std::string>& class_names);
nlohmann::json to_json(const DetectionReport& report);

}  // namespace lsp
