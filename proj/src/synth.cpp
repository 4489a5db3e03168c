#include "mvw/synth.hpp"

#include <algorithm>
#include <cmath>

#include "mvw/rng.hpp"

namespace mvw {

namespace {

std::array<double, 3> hsvColor(double hue) {
  // Saturated wheel, value 0.9; enough contrast against the gray background.
  const double h = 6.0 * (hue - std::floor(hue));
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double v = 0.9, p = 0.1, q = v - (v - p) * f, t = p + (v - p) * f;
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Folds a real coordinate into [lo, hi] by reflection.
double reflectInto(double x, double lo, double hi) {
  const double w = hi - lo;
  if (w <= 0.0) return lo;
  double y = std::fmod(x - lo, 2.0 * w);
  if (y < 0.0) y += 2.0 * w;
  return lo + (y <= w ? y : 2.0 * w - y);
}

struct Event {
  int cls = 0;
  int t0 = 0;
  int len = 1;
  double start_x = 0.5, start_y = 0.5;
  double dir_x = 1.0, dir_y = 0.0;
};

struct Affine {
  // pixel = R * (room - 0.5) * scale * image + center * image
  double a, b, c, d, tx, ty;

  std::pair<double, double> apply(double x, double y) const {
    return {a * (x - 0.5) + b * (y - 0.5) + tx, c * (x - 0.5) + d * (y - 0.5) + ty};
  }
};

Affine makeAffine(const ViewParams& vp, int image_size) {
  const double s = vp.scale * image_size;
  const double cs = std::cos(vp.rotation), sn = std::sin(vp.rotation);
  return {cs * s, -sn * s, sn * s, cs * s, vp.center_x * image_size, vp.center_y * image_size};
}

}  // namespace

ScenarioConfig ScenarioConfig::resolved() const {
  ScenarioConfig cfg = *this;
  if (cfg.num_views < 1) throw ConfigError("scenario: num_views must be >= 1");
  if (cfg.num_classes < 1) throw ConfigError("scenario: num_classes must be >= 1");
  if (cfg.num_frames < 1) throw ConfigError("scenario: num_frames must be >= 1");
  if (cfg.events_min < 0 || cfg.events_max < cfg.events_min)
    throw ConfigError("scenario: bad event count range");
  if (cfg.noise < 0.0) throw ConfigError("scenario: noise must be >= 0");

  if (cfg.templates.empty()) {
    for (int c = 0; c < cfg.num_classes; ++c) {
      ClassTemplate t;
      t.color = hsvColor((c + 0.25) / cfg.num_classes);
      t.block_half = 0.09;
      t.speed = 0.20 + 0.05 * (c % 3);
      cfg.templates.push_back(t);
    }
  }
  if (static_cast<int>(cfg.templates.size()) != cfg.num_classes)
    throw ConfigError("scenario: need one class template per class");

  if (cfg.views.empty()) {
    for (int s = 0; s < cfg.num_views; ++s) {
      ViewParams vp;
      vp.scale = 0.8;
      // Rotations stay small enough that the room maps fully inside the image.
      vp.rotation = std::clamp((s - (cfg.num_views - 1) / 2.0) * 0.12, -0.2, 0.2);
      cfg.views.push_back(vp);
    }
  }
  if (static_cast<int>(cfg.views.size()) != cfg.num_views)
    throw ConfigError("scenario: need one ViewParams per view");

  if (cfg.event_len_min <= 0) cfg.event_len_min = std::max(1, cfg.num_frames / 3);
  if (cfg.event_len_max <= 0) cfg.event_len_max = std::max(cfg.event_len_min, 2 * cfg.num_frames / 3);
  if (cfg.event_len_max > cfg.num_frames || cfg.event_len_min > cfg.event_len_max)
    throw ConfigError("scenario: event length range does not fit in [0, T)");

  double smallest_scale = cfg.views.front().scale;
  for (const ViewParams& v : cfg.views) smallest_scale = std::min(smallest_scale, v.scale);
  for (const ClassTemplate& t : cfg.templates)
    if (2.0 * t.block_half * smallest_scale * cfg.image_size < 2.0)
      throw ConfigError("scenario: image too small for block size (block under 2 pixels)");
  return cfg;
}

std::vector<std::vector<std::vector<Box>>> SceneGroundTruth::detectorBoxes() const {
  std::vector<std::vector<std::vector<Box>>> out(actor_boxes.size());
  for (std::size_t s = 0; s < actor_boxes.size(); ++s) {
    out[s].resize(actor_boxes[s].size());
    for (std::size_t t = 0; t < actor_boxes[s].size(); ++t)
      for (const GtBox& g : actor_boxes[s][t]) out[s][t].push_back(g.box);
  }
  return out;
}

std::pair<MultiViewSequence, SceneGroundTruth> generateScene(const ScenarioConfig& raw_cfg,
                                                             std::uint64_t seed) {
  const ScenarioConfig cfg = raw_cfg.resolved();
  const int S = cfg.num_views, T = cfg.num_frames, img = cfg.image_size, C = cfg.num_classes;

  Rng rng(seed);
  const int n_events = rng.rangeInt(cfg.events_min, cfg.events_max);
  std::vector<Event> events;
  for (int e = 0; e < n_events; ++e) {
    Event ev;
    ev.cls = rng.rangeInt(0, C - 1);
    ev.len = rng.rangeInt(cfg.event_len_min, cfg.event_len_max);
    ev.t0 = rng.rangeInt(0, T - ev.len);
    const ClassTemplate& tpl = cfg.templates[ev.cls];
    // Each class owns a horizontal lane so concurrent events rarely overlap
    // and position itself carries class information.
    const double lane_lo = (ev.cls + 0.0) / C, lane_hi = (ev.cls + 1.0) / C;
    const double m = tpl.block_half;
    ev.start_x = rng.uniform(m, 1.0 - m);
    ev.start_y = rng.uniform(std::max(m, lane_lo + 0.02), std::min(1.0 - m, lane_hi - 0.02));
    const double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    ev.dir_x = std::cos(ang);
    ev.dir_y = 0.25 * std::sin(ang);  // mostly horizontal so lanes stay distinct
    events.push_back(ev);
  }

  SceneGroundTruth gt;
  gt.frame_labels = Mati::Zero(T, C);
  gt.actor_boxes.assign(S, std::vector<std::vector<GtBox>>(T));

  std::vector<Affine> affines;
  for (int s = 0; s < S; ++s) affines.push_back(makeAffine(cfg.views[s], img));

  MultiViewSequence seq;
  seq.fps = cfg.fps;
  seq.sequence_id = "scene";
  for (int c = 0; c < C; ++c) seq.class_names.push_back("action_" + std::to_string(c));
  const float bg = 0.45f;
  for (int s = 0; s < S; ++s) {
    TensorData v({static_cast<std::uint32_t>(T), static_cast<std::uint32_t>(img),
                  static_cast<std::uint32_t>(img), 3u});
    std::fill(v.data.begin(), v.data.end(), bg);
    seq.views.push_back(std::move(v));
  }

  for (const Event& ev : events) {
    const ClassTemplate& tpl = cfg.templates[ev.cls];
    const double m = tpl.block_half;
    const double lane_lo = std::max(m, ev.cls / static_cast<double>(C) + 0.02);
    const double lane_hi = std::min(1.0 - m, (ev.cls + 1.0) / C - 0.02);
    for (int t = ev.t0; t < ev.t0 + ev.len; ++t) {
      gt.frame_labels(t, ev.cls) = 1;
      const double cx = reflectInto(ev.start_x + tpl.speed * ev.dir_x * (t - ev.t0), m, 1.0 - m);
      double cy = ev.start_y + tpl.speed * ev.dir_y * (t - ev.t0);
      cy = lane_hi > lane_lo ? reflectInto(cy, lane_lo, lane_hi) : ev.start_y;

      for (int s = 0; s < S; ++s) {
        // Map the block's room rectangle corners, take the pixel AABB.
        const Affine& A = affines[s];
        double px1 = 1e30, py1 = 1e30, px2 = -1e30, py2 = -1e30;
        for (int corner = 0; corner < 4; ++corner) {
          const double rx = cx + (corner % 2 == 0 ? -m : m);
          const double ry = cy + (corner / 2 == 0 ? -m : m);
          const auto [px, py] = A.apply(rx, ry);
          px1 = std::min(px1, px);
          py1 = std::min(py1, py);
          px2 = std::max(px2, px);
          py2 = std::max(py2, py);
        }
        const int x1 = std::clamp(static_cast<int>(std::floor(px1)), 0, img);
        const int y1 = std::clamp(static_cast<int>(std::floor(py1)), 0, img);
        const int x2 = std::clamp(static_cast<int>(std::ceil(px2)), 0, img);
        const int y2 = std::clamp(static_cast<int>(std::ceil(py2)), 0, img);
        if (x2 <= x1 || y2 <= y1) continue;

        TensorData& view = seq.views[s];
        for (int y = y1; y < y2; ++y)
          for (int x = x1; x < x2; ++x)
            for (int ch = 0; ch < 3; ++ch)
              view.at({static_cast<std::size_t>(t), static_cast<std::size_t>(y),
                       static_cast<std::size_t>(x), static_cast<std::size_t>(ch)}) =
                  static_cast<float>(tpl.color[ch]);

        GtBox gb;
        gb.cls = ev.cls;
        gb.box = Box{static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x2),
                     static_cast<double>(y2), 1.0};
        gt.actor_boxes[s][t].push_back(gb);
      }
    }
  }

  if (cfg.noise > 0.0) {
    for (int s = 0; s < S; ++s) {
      Rng noise_rng(Rng::mix(seed, 1000 + static_cast<std::uint64_t>(s)));
      for (float& px : seq.views[s].data) {
        const double v = px + cfg.noise * noise_rng.gaussian();
        px = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }

  ActionBag bag = deriveActionBag(FrameLabelMatrix{gt.frame_labels});
  gt.bag = bag.bag;
  return {std::move(seq), std::move(gt)};
}

DatasetIndex buildCorpus(const ScenarioConfig& cfg, int n_sequences, std::uint64_t seed,
                         const std::filesystem::path& out_dir) {
  if (n_sequences < 1) throw ConfigError("buildCorpus: n_sequences must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "sequences", ec);
  if (ec) throw DataError("cannot create " + (out_dir / "sequences").string() + ": " + ec.message());

  DatasetIndex index;
  for (int k = 0; k < n_sequences; ++k) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "seq_%04d", k);
    const std::string id(buf);
    const std::uint64_t seq_seed = Rng::mix(seed, static_cast<std::uint64_t>(k));

    auto [seq, gt] = generateScene(cfg, seq_seed);
    seq.sequence_id = id;
    const auto dir = out_dir / "sequences" / id;

    FrameLabelMatrix labels{gt.frame_labels};
    ActionBag bag{gt.bag};
    saveSequence(dir, seq, &labels, bag);

    DetectionSet dets = DetectionSet::empty(cfg.num_views, cfg.num_frames);
    dets.boxes = gt.detectorBoxes();
    dets.toJsonl(dir / "detections.jsonl");

    index.entries.push_back({id, "sequences/" + id, true});
  }
  saveIndex(out_dir, index);
  return index;
}

}  // namespace mvw
