#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "denet/density.hpp"
#include "denet/fusion.hpp"
#include "json.hpp"

namespace denet {

using Json = nlohmann::json;

// Annotation: {"image_id": str, "width": int, "height": int, "points": [[x, y], ...]}
DotAnnotation annotation_from_json(const Json& j);
Json annotation_to_json(const DotAnnotation& ann);

// Detections: {"image_id": str, "detections": [{"box": [x0,y0,x1,y1], "score": f,
//   "label": "person", "mask_rle": {"size": [h,w], "counts": [ints]}}]}
DetectionSet detections_from_json(const Json& j);
Json detections_to_json(const DetectionSet& ds);

/// Parses a file, turning JSON syntax errors into ValidationError.
Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);

DotAnnotation load_annotation(const std::filesystem::path& path);
DetectionSet load_detections(const std::filesystem::path& path);

/// One dataset entry; paths are resolved against the manifest's directory.
struct DatasetItem {
  std::string image_id;
  std::filesystem::path image;
  std::filesystem::path annotation;
};

// Dataset manifest: {"items": [{"image_id": str, "image": path, "annotation": path}]}
std::vector<DatasetItem> load_dataset_manifest(const std::filesystem::path& path);
void save_dataset_manifest(const std::filesystem::path& path, const std::vector<DatasetItem>& items);

namespace schema {
/// Throws ValidationError if `j` has keys outside `allowed`.
void reject_unknown_keys(const Json& j, const std::vector<std::string>& allowed, const std::string& where);
}  // namespace schema

}  // namespace denet
