#pragma once

// JSON encodings of the geometry and tracking value types shared by the
// checkpoint and annotation formats. Masks travel as their tight window plus
// run lengths (alternating background/foreground, background first).

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autoannot/ash.hpp"
#include "autoannot/assoc.hpp"
#include "autoannot/error.hpp"
#include "autoannot/geometry.hpp"

namespace autoannot::codec {

using json = nlohmann::json;

inline json encode(const BBox& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

inline BBox decode_box(const json& j) {
  if (!j.is_array() || j.size() != 4) throw Error(ErrorCategory::validation, "box must be an array of 4 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

inline json encode(const Polygon& p) {
  json out = json::array();
  for (const auto& v : p.vertices) out.push_back(json::array({v.x, v.y}));
  return out;
}

inline Polygon decode_polygon(const json& j) {
  if (!j.is_array()) throw Error(ErrorCategory::validation, "polygon must be an array of [x, y] pairs");
  Polygon p;
  for (const auto& v : j) {
    if (!v.is_array() || v.size() != 2) throw Error(ErrorCategory::validation, "polygon vertex must be [x, y]");
    p.vertices.push_back({v[0].get<double>(), v[1].get<double>()});
  }
  return p;
}

inline json encode(const BinaryMask& m) {
  const PixelRect& w = m.window();
  json rle = json::array();
  std::uint8_t cur = 0;
  std::uint64_t run = 0;
  for (auto b : m.window_bits()) {
    const std::uint8_t v = b ? 1 : 0;
    if (v != cur) {
      rle.push_back(run);
      run = 0;
      cur = v;
    }
    ++run;
  }
  if (!m.empty()) rle.push_back(run);
  return {{"w", m.width()}, {"h", m.height()}, {"window", {w.x0, w.y0, w.x1, w.y1}}, {"rle", rle}};
}

inline BinaryMask decode_mask(const json& j) {
  const int width = j.at("w").get<int>(), height = j.at("h").get<int>();
  const auto& win = j.at("window");
  if (!win.is_array() || win.size() != 4) throw Error(ErrorCategory::validation, "mask window must have 4 entries");
  const PixelRect r{win[0].get<int>(), win[1].get<int>(), win[2].get<int>(), win[3].get<int>()};
  std::vector<std::uint8_t> bits;
  if (!r.empty()) bits.reserve(static_cast<std::size_t>(r.width()) * static_cast<std::size_t>(r.height()));
  std::uint8_t cur = 0;
  for (const auto& run : j.at("rle")) {
    bits.insert(bits.end(), run.get<std::uint64_t>(), cur);
    cur ^= 1;
  }
  return BinaryMask::from_window(width, height, r, bits);
}

inline json encode(const Track& t) {
  return {{"id", t.id},
          {"box", encode(t.last_box)},
          {"last_seen_frame", t.last_seen_frame},
          {"class_label", t.class_label},
          {"age", t.age}};
}

inline Track decode_track(const json& j) {
  return {j.at("id").get<int>(), decode_box(j.at("box")), j.at("last_seen_frame").get<int>(),
          j.at("class_label").get<std::string>(), j.at("age").get<int>()};
}

inline json encode(const AssocState& s) {
  json tracks = json::array();
  for (const auto& t : s.tracks) tracks.push_back(encode(t));
  return {{"tracks", tracks}, {"next_id", s.next_id}, {"last_frame", s.last_frame}};
}

inline AssocState decode_assoc(const json& j) {
  AssocState s;
  for (const auto& t : j.at("tracks")) s.tracks.push_back(decode_track(t));
  s.next_id = j.at("next_id").get<int>();
  s.last_frame = j.at("last_frame").get<int>();
  return s;
}

inline json encode(const Masklet& m) {
  json entries = json::array();
  for (const auto& [f, e] : m.entries)
    entries.push_back({{"frame", f},
                       {"confidence", e.confidence},
                       {"box", encode(e.box)},
                       {"polygon", e.polygon ? encode(*e.polygon) : json(nullptr)},
                       {"mask", encode(e.mask)}});
  return {{"object_id", m.object_id}, {"class_label", m.class_label}, {"entries", entries}};
}

inline Masklet decode_masklet(const json& j) {
  Masklet m{j.at("object_id").get<int>(), j.at("class_label").get<std::string>(), {}};
  for (const auto& e : j.at("entries")) {
    MaskletEntry entry{decode_mask(e.at("mask")), std::nullopt, decode_box(e.at("box")),
                       e.at("confidence").get<double>()};
    if (!e.at("polygon").is_null()) entry.polygon = decode_polygon(e.at("polygon"));
    m.entries.emplace(e.at("frame").get<int>(), std::move(entry));
  }
  return m;
}

inline json encode(const MaskletStore& store) {
  json out = json::array();
  for (const auto& [id, m] : store) out.push_back(encode(m));
  return out;
}

inline MaskletStore decode_store(const json& j) {
  MaskletStore s;
  for (const auto& m : j) {
    Masklet x = decode_masklet(m);
    const int id = x.object_id;
    s.emplace(id, std::move(x));
  }
  return s;
}

}  // namespace autoannot::codec
