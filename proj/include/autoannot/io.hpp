#pragma once

// MOT-Challenge text records and line-delimited polygon annotations.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "autoannot/ash.hpp"
#include "autoannot/backends.hpp"
#include "autoannot/chunker.hpp"
#include "autoannot/codec.hpp"
#include "autoannot/error.hpp"
#include "autoannot/geometry.hpp"
#include "autoannot/metrics.hpp"

namespace autoannot {

/// frame,id,x,y,w,h,conf,class,visibility; frame is 1-based, id -1 marks a
/// raw detection.
struct MotRecord {
  int frame = 1;
  int id = -1;
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  double conf = 1.0;
  int class_id = 1;
  double visibility = 1.0;

  BBox box() const { return BBox::from_xywh(x, y, w, h); }
  friend bool operator==(const MotRecord&, const MotRecord&) = default;
};

using MotFrames = std::map<int, std::vector<MotRecord>>;

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class T>
T parse_number(std::string_view field, const std::string& where, const char* column) {
  field = trim(field);
  T v{};
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty())
    throw Error(ErrorCategory::io, where + ": column '" + column + "' is not a valid number: '" + std::string(field) + "'");
  return v;
}

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s(buf);
  if (s == "-0.000000") s = "0.000000";
  return s;
}

}  // namespace detail

/// Parses MOT text. Needs at least 7 columns; class and visibility default to
/// 1; columns past the ninth are ignored.
inline MotFrames parse_mot(std::istream& in, const std::string& source = "<mot>") {
  MotFrames out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view l = detail::trim(line);
    if (l.empty()) continue;
    std::vector<std::string_view> cols;
    std::size_t pos = 0;
    for (;;) {
      const std::size_t c = l.find(',', pos);
      cols.push_back(l.substr(pos, c == std::string_view::npos ? std::string_view::npos : c - pos));
      if (c == std::string_view::npos) break;
      pos = c + 1;
    }
    const std::string where = source + ":" + std::to_string(lineno);
    if (cols.size() < 7) throw Error(ErrorCategory::io, where + ": expected at least 7 columns, got " + std::to_string(cols.size()));
    MotRecord r;
    r.frame = detail::parse_number<int>(cols[0], where, "frame");
    r.id = detail::parse_number<int>(cols[1], where, "id");
    r.x = detail::parse_number<double>(cols[2], where, "x");
    r.y = detail::parse_number<double>(cols[3], where, "y");
    r.w = detail::parse_number<double>(cols[4], where, "w");
    r.h = detail::parse_number<double>(cols[5], where, "h");
    r.conf = detail::parse_number<double>(cols[6], where, "conf");
    if (cols.size() > 7) r.class_id = detail::parse_number<int>(cols[7], where, "class");
    if (cols.size() > 8) r.visibility = detail::parse_number<double>(cols[8], where, "visibility");
    if (r.frame < 1) throw Error(ErrorCategory::io, where + ": frame must be >= 1");
    if (!(r.w > 0.0) || !(r.h > 0.0)) throw Error(ErrorCategory::io, where + ": width and height must be > 0");
    if (!(r.conf >= 0.0 && r.conf <= 1.0)) throw Error(ErrorCategory::io, where + ": conf must be in [0, 1]");
    out[r.frame].push_back(r);
  }
  return out;
}

inline MotFrames read_mot(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::io, "cannot open " + path.string());
  return parse_mot(in, path.string());
}

inline std::string format_mot(const std::vector<MotRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += std::to_string(r.frame) + "," + std::to_string(r.id) + "," + detail::fixed6(r.x) + "," +
           detail::fixed6(r.y) + "," + detail::fixed6(r.w) + "," + detail::fixed6(r.h) + "," + detail::fixed6(r.conf) +
           "," + std::to_string(r.class_id) + "," + detail::fixed6(r.visibility) + "\n";
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  detail::write_file(path, text);
}

inline void write_mot(const std::vector<MotRecord>& records, const std::filesystem::path& path) {
  write_text(path, format_mot(records));
}

inline std::vector<MotRecord> flatten(const MotFrames& frames) {
  std::vector<MotRecord> out;
  for (const auto& [f, rs] : frames) out.insert(out.end(), rs.begin(), rs.end());
  return out;
}

/// 1-based class id of a label in `labels`; unknown labels map to 0.
inline int class_id_of(const std::string& label, const std::vector<std::string>& labels) {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) return static_cast<int>(i) + 1;
  return 0;
}

inline std::string label_of(int class_id, const std::vector<std::string>& labels) {
  if (class_id >= 1 && class_id <= static_cast<int>(labels.size())) return labels[static_cast<std::size_t>(class_id) - 1];
  return "class_" + std::to_string(class_id);
}

inline MotRecord to_mot(const Detection& d, int frame_index, int id, const std::vector<std::string>& labels) {
  return {frame_index + 1, id, d.box.x1, d.box.y1, d.box.width(), d.box.height(), d.confidence,
          class_id_of(d.class_label, labels), 1.0};
}

/// Per-frame detections (0-based frame index) from MOT records over num_frames frames.
inline std::vector<std::vector<Detection>> detections_from_mot(const MotFrames& frames, int num_frames,
                                                               const std::vector<std::string>& labels) {
  std::vector<std::vector<Detection>> out(static_cast<std::size_t>(num_frames));
  for (const auto& [f, rs] : frames) {
    if (f > num_frames) throw Error(ErrorCategory::io, "detection frame " + std::to_string(f) + " beyond sequence length");
    for (const auto& r : rs) out[static_cast<std::size_t>(f - 1)].push_back({r.box(), label_of(r.class_id, labels), r.conf});
  }
  return out;
}

/// Ground truth as MOT records: visible objects only, id = object id.
inline std::vector<MotRecord> gt_to_mot(std::span<const GroundTruthFrame> gt, const std::vector<std::string>& labels) {
  std::vector<MotRecord> out;
  for (const auto& f : gt)
    for (const auto& o : f.objects) {
      if (o.visibility <= 0.0) continue;
      out.push_back({f.frame_index + 1, o.id, o.box.x1, o.box.y1, o.box.width(), o.box.height(), 1.0,
                     class_id_of(o.class_label, labels), o.visibility});
    }
  return out;
}

inline TrackSequence tracks_from_mot(const MotFrames& frames, int num_frames, const std::vector<std::string>& labels) {
  TrackSequence out;
  for (int f = 0; f < num_frames; ++f) {
    FrameBoxes fb{f, {}};
    if (auto it = frames.find(f + 1); it != frames.end())
      for (const auto& r : it->second) fb.boxes.push_back({r.id, r.box(), label_of(r.class_id, labels)});
    out.push_back(std::move(fb));
  }
  return out;
}

/// Visible ground truth; objects with at most `min_pixels` visible pixels
/// (below the annotation floor) are left out.
inline TrackSequence tracks_from_gt(std::span<const GroundTruthFrame> gt, std::size_t min_pixels = 0) {
  TrackSequence out;
  for (const auto& f : gt) {
    FrameBoxes fb{f.frame_index, {}};
    for (const auto& o : f.objects)
      if (o.visibility > 0.0 && o.mask.count() > min_pixels) fb.boxes.push_back({o.id, o.box, o.class_label});
    out.push_back(std::move(fb));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Annotations

inline constexpr int kAnnotationSchemaVersion = 1;

struct AnnotatedObject {
  int track_id = 0;
  std::string class_label;
  double confidence = 0.0;
  Polygon polygon;
  BBox bbox;

  friend bool operator==(const AnnotatedObject&, const AnnotatedObject&) = default;
};

struct AnnotatedFrame {
  int frame = 0;
  std::vector<AnnotatedObject> objects;  // ascending track id

  friend bool operator==(const AnnotatedFrame&, const AnnotatedFrame&) = default;
};

struct AnnotationDocument {
  int schema_version = kAnnotationSchemaVersion;
  std::string sequence_id;
  int width = 1;
  int height = 1;
  std::vector<AnnotatedFrame> frames;  // one per frame, 0-based, possibly empty

  friend bool operator==(const AnnotationDocument&, const AnnotationDocument&) = default;
};

/// Every frame of [0, num_frames) gets a line; entries without a polygon are skipped.
inline AnnotationDocument to_annotations(const MaskletStore& store, const std::string& sequence_id, int width,
                                         int height, int num_frames) {
  AnnotationDocument doc{kAnnotationSchemaVersion, sequence_id, width, height, {}};
  for (int f = 0; f < num_frames; ++f) doc.frames.push_back({f, {}});
  for (const auto& [id, m] : store)
    for (const auto& [f, e] : m.entries) {
      if (!e.polygon || f < 0 || f >= num_frames) continue;
      doc.frames[static_cast<std::size_t>(f)].objects.push_back({id, m.class_label, e.confidence, *e.polygon, e.box});
    }
  return doc;
}

inline TrackSequence tracks_from_annotations(const AnnotationDocument& doc) {
  TrackSequence out;
  for (const auto& f : doc.frames) {
    FrameBoxes fb{f.frame, {}};
    for (const auto& o : f.objects) fb.boxes.push_back({o.track_id, o.bbox, o.class_label});
    out.push_back(std::move(fb));
  }
  return out;
}

inline std::string format_annotations(const AnnotationDocument& doc) {
  using nlohmann::json;
  std::string out = json{{"schema_version", doc.schema_version},
                         {"sequence_id", doc.sequence_id},
                         {"width", doc.width},
                         {"height", doc.height},
                         {"num_frames", doc.frames.size()}}
                        .dump() +
                    "\n";
  for (const auto& f : doc.frames) {
    json objs = json::array();
    for (const auto& o : f.objects)
      objs.push_back({{"track_id", o.track_id},
                      {"class_label", o.class_label},
                      {"confidence", o.confidence},
                      {"polygon", codec::encode(o.polygon)},
                      {"bbox", codec::encode(o.bbox)}});
    out += json{{"frame", f.frame}, {"objects", objs}}.dump() + "\n";
  }
  return out;
}

inline void write_annotations(const AnnotationDocument& doc, const std::filesystem::path& path) {
  write_text(path, format_annotations(doc));
}

inline AnnotationDocument parse_annotations(std::istream& in, const std::string& source = "<annotations>") {
  using nlohmann::json;
  AnnotationDocument doc;
  std::string line;
  int lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    try {
      const json j = json::parse(line);
      if (!header) {
        doc.schema_version = j.at("schema_version").get<int>();
        if (doc.schema_version != kAnnotationSchemaVersion)
          throw Error(ErrorCategory::io, "unsupported schema_version " + std::to_string(doc.schema_version));
        doc.sequence_id = j.at("sequence_id").get<std::string>();
        doc.width = j.at("width").get<int>();
        doc.height = j.at("height").get<int>();
        header = true;
        continue;
      }
      AnnotatedFrame f{j.at("frame").get<int>(), {}};
      for (const auto& o : j.at("objects"))
        f.objects.push_back({o.at("track_id").get<int>(), o.at("class_label").get<std::string>(),
                             o.at("confidence").get<double>(), codec::decode_polygon(o.at("polygon")),
                             codec::decode_box(o.at("bbox"))});
      doc.frames.push_back(std::move(f));
    } catch (const Error& e) {
      throw Error(ErrorCategory::io, where + ": " + e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorCategory::io, where + ": malformed annotation line (" + e.what() + ")");
    }
  }
  if (!header) throw Error(ErrorCategory::io, source + ": missing header line");
  return doc;
}

inline AnnotationDocument read_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::io, "cannot open " + path.string());
  return parse_annotations(in, path.string());
}

/// Annotation boxes as MOT records (frame 1-based, id = track id).
inline std::vector<MotRecord> annotations_to_mot(const AnnotationDocument& doc, const std::vector<std::string>& labels) {
  std::vector<MotRecord> out;
  for (const auto& f : doc.frames)
    for (const auto& o : f.objects)
      out.push_back({f.frame + 1, o.track_id, o.bbox.x1, o.bbox.y1, o.bbox.width(), o.bbox.height(), o.confidence,
                     class_id_of(o.class_label, labels), 1.0});
  return out;
}

}  // namespace autoannot
