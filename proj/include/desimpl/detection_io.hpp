#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "desimpl/core_types.hpp"

namespace desimpl {

/// Detection interchange format: one JSON object per line,
///   {"image_id": "...", "class_id": 0, "bbox": [x1,y1,x2,y2], "score": 0.9}
/// Ground-truth lines omit "score". Unknown keys are ignored. Blank lines are
/// skipped.
///
/// Parsing groups lines by image_id; the result is sorted by image_id and
/// every set satisfies the detection ordering invariant. Errors carry the
/// 1-based line number.
std::vector<LabelSet> parse_detections(std::istream& in, LabelKind kind,
                                       std::optional<int> class_count = std::nullopt);

std::vector<LabelSet> read_detections(const std::filesystem::path& path, LabelKind kind,
                                      std::optional<int> class_count = std::nullopt);

/// Writes sets sorted by image_id, detections in stable order. Scores are
/// omitted for ground-truth sets.
void write_detections(std::ostream& out, const std::vector<LabelSet>& sets);

/// Format a double with the shortest representation that round-trips.
std::string format_double(double v);

/// Writes `contents` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

void write_detections_file(const std::filesystem::path& path, const std::vector<LabelSet>& sets);

}  // namespace desimpl
