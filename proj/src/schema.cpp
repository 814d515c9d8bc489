#include "denet/schema.hpp"

#include <algorithm>
#include <fstream>

#include "denet/binary_io.hpp"
#include "denet/errors.hpp"

namespace denet {

namespace schema {

void reject_unknown_keys(const Json& j, const std::vector<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ValidationError(where + ": unknown key '" + key + "'");
}

}  // namespace schema

namespace {

const Json& field(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected a JSON object");
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(where + ": missing required key '" + key + "'");
  return *it;
}

std::string get_string(const Json& j, const char* key, const std::string& where) {
  const auto& v = field(j, key, where);
  if (!v.is_string()) throw ValidationError(where + ": '" + key + "' must be a string");
  return v.get<std::string>();
}

std::size_t get_positive(const Json& j, const char* key, const std::string& where) {
  const auto& v = field(j, key, where);
  if (!v.is_number_integer() || v.get<long long>() <= 0)
    throw ValidationError(where + ": '" + key + "' must be a positive integer");
  return v.get<std::size_t>();
}

double as_number(const Json& v, const std::string& what) {
  if (!v.is_number()) throw ValidationError(what + " must be a number");
  return v.get<double>();
}

}  // namespace

DotAnnotation annotation_from_json(const Json& j) {
  const std::string where = "annotation";
  if (!j.is_object()) throw ValidationError(where + ": expected a JSON object");
  schema::reject_unknown_keys(j, {"image_id", "width", "height", "points"}, where);
  DotAnnotation ann;
  ann.image_id = get_string(j, "image_id", where);
  const std::string w2 = "annotation '" + ann.image_id + "'";
  ann.width = get_positive(j, "width", w2);
  ann.height = get_positive(j, "height", w2);
  const auto& pts = field(j, "points", w2);
  if (!pts.is_array()) throw ValidationError(w2 + ": 'points' must be an array");
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i];
    const std::string pw = w2 + ": points[" + std::to_string(i) + "]";
    if (!p.is_array() || p.size() != 2) throw ValidationError(pw + " must be [x, y]");
    ann.points.push_back({as_number(p[0], pw + ".x"), as_number(p[1], pw + ".y")});
  }
  ann.validate();
  return ann;
}

Json annotation_to_json(const DotAnnotation& ann) {
  Json pts = Json::array();
  for (const auto& p : ann.points) pts.push_back({p.x, p.y});
  return {{"image_id", ann.image_id}, {"width", ann.width}, {"height", ann.height}, {"points", pts}};
}

DetectionSet detections_from_json(const Json& j) {
  std::string where = "detections";
  if (!j.is_object()) throw ValidationError(where + ": expected a JSON object");
  schema::reject_unknown_keys(j, {"image_id", "detections"}, where);
  DetectionSet ds;
  ds.image_id = get_string(j, "image_id", where);
  where = "detections '" + ds.image_id + "'";
  const auto& arr = field(j, "detections", where);
  if (!arr.is_array()) throw ValidationError(where + ": 'detections' must be an array");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& d = arr[i];
    const std::string dw = where + ": detections[" + std::to_string(i) + "]";
    if (!d.is_object()) throw ValidationError(dw + " must be an object");
    schema::reject_unknown_keys(d, {"box", "score", "label", "mask_rle"}, dw);
    Detection det;
    const auto& box = field(d, "box", dw);
    if (!box.is_array() || box.size() != 4) throw ValidationError(dw + ".box must be [x0, y0, x1, y1]");
    det.box = {as_number(box[0], dw + ".box[0]"), as_number(box[1], dw + ".box[1]"),
               as_number(box[2], dw + ".box[2]"), as_number(box[3], dw + ".box[3]")};
    if (!(det.box.x0 < det.box.x1) || !(det.box.y0 < det.box.y1))
      throw ValidationError(dw + ".box requires x0 < x1 and y0 < y1");
    det.score = as_number(field(d, "score", dw), dw + ".score");
    if (!(det.score >= 0.0 && det.score <= 1.0)) throw ValidationError(dw + ".score must be in [0, 1]");
    if (d.contains("label")) {
      if (!d["label"].is_string()) throw ValidationError(dw + ".label must be a string");
      det.label = d["label"].get<std::string>();
    }
    if (d.contains("mask_rle") && !d["mask_rle"].is_null()) {
      const auto& m = d["mask_rle"];
      const std::string mw = dw + ".mask_rle";
      if (!m.is_object()) throw ValidationError(mw + " must be an object");
      schema::reject_unknown_keys(m, {"size", "counts"}, mw);
      const auto& size = field(m, "size", mw);
      if (!size.is_array() || size.size() != 2 || !size[0].is_number_integer() || !size[1].is_number_integer() ||
          size[0].get<long long>() <= 0 || size[1].get<long long>() <= 0)
        throw ValidationError(mw + ".size must be [h, w] with positive integers");
      RleMask rle{size[0].get<std::size_t>(), size[1].get<std::size_t>(), {}};
      const auto& counts = field(m, "counts", mw);
      if (!counts.is_array()) throw ValidationError(mw + ".counts must be an array of run lengths");
      for (const auto& c : counts) {
        if (!c.is_number_integer() || c.get<long long>() < 0)
          throw ValidationError(mw + ".counts must contain non-negative integers");
        rle.counts.push_back(c.get<std::uint32_t>());
      }
      rle.decode();  // checks the runs cover the mask exactly
      det.mask = std::move(rle);
    }
    ds.detections.push_back(std::move(det));
  }
  return ds;
}

Json detections_to_json(const DetectionSet& ds) {
  Json arr = Json::array();
  for (const auto& d : ds.detections) {
    Json o = {{"box", {d.box.x0, d.box.y0, d.box.x1, d.box.y1}}, {"score", d.score}, {"label", d.label}};
    if (d.mask) o["mask_rle"] = {{"size", {d.mask->height, d.mask->width}}, {"counts", d.mask->counts}};
    arr.push_back(std::move(o));
  }
  return {{"image_id", ds.image_id}, {"detections", arr}};
}

Json read_json_file(const std::filesystem::path& path) {
  const std::string text = binio::read_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  binio::write_file(path, j.dump(2) + "\n");
}

DotAnnotation load_annotation(const std::filesystem::path& path) {
  try {
    return annotation_from_json(read_json_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

DetectionSet load_detections(const std::filesystem::path& path) {
  try {
    return detections_from_json(read_json_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::vector<DatasetItem> load_dataset_manifest(const std::filesystem::path& path) {
  const Json j = read_json_file(path);
  const std::string where = path.string();
  if (!j.is_object()) throw ValidationError(where + ": expected a JSON object");
  schema::reject_unknown_keys(j, {"items"}, where);
  const auto& items = field(j, "items", where);
  if (!items.is_array()) throw ValidationError(where + ": 'items' must be an array");
  const auto base = path.parent_path();
  std::vector<DatasetItem> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::string iw = where + ": items[" + std::to_string(i) + "]";
    if (!items[i].is_object()) throw ValidationError(iw + " must be an object");
    schema::reject_unknown_keys(items[i], {"image_id", "image", "annotation"}, iw);
    out.push_back({get_string(items[i], "image_id", iw), base / get_string(items[i], "image", iw),
                   base / get_string(items[i], "annotation", iw)});
  }
  return out;
}

void save_dataset_manifest(const std::filesystem::path& path, const std::vector<DatasetItem>& items) {
  Json arr = Json::array();
  const auto base = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  for (const auto& it : items)
    arr.push_back({{"image_id", it.image_id},
                   {"image", std::filesystem::relative(it.image, base).generic_string()},
                   {"annotation", std::filesystem::relative(it.annotation, base).generic_string()}});
  write_json_file(path, {{"items", arr}});
}

}  // namespace denet
