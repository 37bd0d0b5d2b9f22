#include "optcwm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "optcwm/pickle.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace optcwm {

void SpriteSceneConfig::validate() const {
    if (height <= 0 || width <= 0) throw ConfigError("scene: empty canvas");
    if (num_sprites < 1) throw ConfigError("scene: num_sprites must be >= 1");
    if (min_size < 1 || min_size > max_size) throw ConfigError("scene: bad sprite size range");
    if (max_size > std::min(height, width))
        throw ConfigError("scene: sprite larger than canvas rejected");
    if (max_speed < 0 || max_speed > std::min(height, width) / 2)
        throw ConfigError("scene: per-step speed exceeds min(H,W)/2");
    if (gap_frames_min < 1 || gap_frames_min > gap_frames_max)
        throw ConfigError("scene: bad gap range");
    if (shapes.empty()) throw ConfigError("scene: empty shape set");
}

namespace {

Image make_background(const SpriteSceneConfig& cfg, Rng& rng) {
    Image bg(cfg.height, cfg.width);
    switch (cfg.background) {
        case BackgroundMode::Solid: {
            Scalar col[3] = {rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
            for (int r = 0; r < cfg.height; ++r)
                for (int c = 0; c < cfg.width; ++c)
                    for (int ch = 0; ch < 3; ++ch) bg.at(r, c, ch) = col[ch];
            break;
        }
        case BackgroundMode::Noise: {
            for (Scalar& v : bg.px) v = rng.uniform(0.2, 0.8);
            break;
        }
        case BackgroundMode::Texture: {
            // low-frequency noise, upsampled
            int gh = std::max(2, cfg.height / 8), gw = std::max(2, cfg.width / 8);
            Image coarse(gh, gw);
            for (Scalar& v : coarse.px) v = rng.uniform(0.2, 0.8);
            bg = resize_bilinear(coarse, cfg.height, cfg.width);
            break;
        }
    }
    return bg;
}

Sprite make_sprite(const SpriteSceneConfig& cfg, Rng& rng) {
    Sprite s;
    s.shape = cfg.shapes[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(cfg.shapes.size())))];
    s.h = static_cast<int>(rng.uniform_int(cfg.min_size, cfg.max_size));
    s.w = static_cast<int>(rng.uniform_int(cfg.min_size, cfg.max_size));
    s.row0 = static_cast<Scalar>(rng.uniform_int(0, cfg.height - s.h));
    s.col0 = static_cast<Scalar>(rng.uniform_int(0, cfg.width - s.w));
    for (int ch = 0; ch < 3; ++ch) s.color[ch] = rng.uniform(0.15, 0.85);
    s.vrow = static_cast<int>(rng.uniform_int(-cfg.max_speed, cfg.max_speed));
    s.vcol = static_cast<int>(rng.uniform_int(-cfg.max_speed, cfg.max_speed));
    s.coverage.assign(static_cast<std::size_t>(s.h) * s.w, 0);
    if (s.shape == SpriteShape::Disk) {
        Scalar cr = (s.h - 1) / 2.0, cc = (s.w - 1) / 2.0;
        Scalar rr = std::max(Scalar(0.5), s.h / 2.0), rc = std::max(Scalar(0.5), s.w / 2.0);
        for (int r = 0; r < s.h; ++r)
            for (int c = 0; c < s.w; ++c) {
                Scalar dr = (r - cr) / rr, dc = (c - cc) / rc;
                if (dr * dr + dc * dc <= 1.0) s.coverage[static_cast<std::size_t>(r) * s.w + c] = 1;
            }
    } else {
        std::fill(s.coverage.begin(), s.coverage.end(), 1);
    }
    if (s.shape == SpriteShape::TexturePatch) {
        s.texture.resize(static_cast<std::size_t>(s.h) * s.w * 3);
        for (Scalar& v : s.texture) v = rng.uniform(0.15, 0.85);
    }
    return s;
}

inline Scalar sprite_alpha(const Sprite& s, Scalar lr, Scalar lc) {
    // bilinear over coverage; outside bbox -> 0
    if (lr < -1 || lc < -1 || lr > s.h || lc > s.w) return 0.0;
    int r0 = static_cast<int>(std::floor(lr)), c0 = static_cast<int>(std::floor(lc));
    Scalar fr = lr - r0, fc = lc - c0;
    auto cov = [&](int r, int c) -> Scalar {
        if (r < 0 || c < 0 || r >= s.h || c >= s.w) return 0.0;
        return s.coverage[static_cast<std::size_t>(r) * s.w + c];
    };
    return (1 - fr) * ((1 - fc) * cov(r0, c0) + fc * cov(r0, c0 + 1)) +
           fr * ((1 - fc) * cov(r0 + 1, c0) + fc * cov(r0 + 1, c0 + 1));
}

inline void sprite_color_at(const Sprite& s, Scalar lr, Scalar lc, Scalar out[3]) {
    if (s.shape != SpriteShape::TexturePatch) {
        out[0] = s.color[0];
        out[1] = s.color[1];
        out[2] = s.color[2];
        return;
    }
    int r0 = std::clamp(static_cast<int>(std::floor(lr)), 0, s.h - 1);
    int c0 = std::clamp(static_cast<int>(std::floor(lc)), 0, s.w - 1);
    int r1 = std::min(r0 + 1, s.h - 1), c1 = std::min(c0 + 1, s.w - 1);
    Scalar fr = std::clamp(lr - r0, Scalar(0), Scalar(1)), fc = std::clamp(lc - c0, Scalar(0), Scalar(1));
    auto tex = [&](int r, int c, int ch) {
        return s.texture[(static_cast<std::size_t>(r) * s.w + c) * 3 + ch];
    };
    for (int ch = 0; ch < 3; ++ch)
        out[ch] = (1 - fr) * ((1 - fc) * tex(r0, c0, ch) + fc * tex(r0, c1, ch)) +
                  fr * ((1 - fc) * tex(r1, c0, ch) + fc * tex(r1, c1, ch));
}

}  // namespace

SpriteScene sample_scene(const SpriteSceneConfig& config) {
    config.validate();
    Rng rng(stream_seed(config.seed, "scene"));
    SpriteScene scene;
    scene.config = config;
    scene.background = make_background(config, rng);
    for (int i = 0; i < config.num_sprites; ++i) scene.sprites.push_back(make_sprite(config, rng));
    // depth order: random permutation; draw order is the sprite vector order
    std::vector<int> ranks(static_cast<std::size_t>(config.num_sprites));
    for (int i = 0; i < config.num_sprites; ++i) ranks[static_cast<std::size_t>(i)] = i;
    for (int i = config.num_sprites - 1; i > 0; --i)
        std::swap(ranks[static_cast<std::size_t>(i)],
                  ranks[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
    for (int i = 0; i < config.num_sprites; ++i)
        scene.sprites[static_cast<std::size_t>(i)].depth_rank = ranks[static_cast<std::size_t>(i)];
    std::sort(scene.sprites.begin(), scene.sprites.end(),
              [](const Sprite& a, const Sprite& b) { return a.depth_rank < b.depth_rank; });

    if (config.with_occluder && config.num_sprites >= 2) {
        // nearest sprite becomes a static occluder parked on the farthest
        // sprite's one-step destination
        Sprite& far_s = scene.sprites.front();
        Sprite& near_s = scene.sprites.back();
        if (far_s.vrow == 0 && far_s.vcol == 0) {
            far_s.vrow = std::max(1, config.max_speed / 2);
            far_s.vcol = std::max(1, config.max_speed / 2);
        }
        near_s.vrow = near_s.vcol = 0;
        Scalar tr = far_s.row0 + far_s.vrow + far_s.h / 2.0 - near_s.h / 2.0;
        Scalar tc = far_s.col0 + far_s.vcol + far_s.w / 2.0 - near_s.w / 2.0;
        near_s.row0 = std::clamp(std::round(tr), Scalar(0), Scalar(config.height - near_s.h));
        near_s.col0 = std::clamp(std::round(tc), Scalar(0), Scalar(config.width - near_s.w));
    }
    return scene;
}

Image render_scene(const SpriteScene& scene, Scalar t) {
    const auto& cfg = scene.config;
    Image out = scene.background;
    if (cfg.background_drift.drow != 0 || cfg.background_drift.dcol != 0) {
        // background content shifted by drift*t, border pixels held
        Image shifted(cfg.height, cfg.width);
        for (int r = 0; r < cfg.height; ++r)
            for (int c = 0; c < cfg.width; ++c)
                for (int ch = 0; ch < 3; ++ch)
                    shifted.at(r, c, ch) = sample_bilinear(
                        scene.background, r - cfg.background_drift.drow * t,
                        c - cfg.background_drift.dcol * t, ch);
        out = shifted;
    }
    for (const Sprite& s : scene.sprites) {
        Scalar pr = s.row0 + s.vrow * t, pc = s.col0 + s.vcol * t;
        if (!cfg.subpixel) {
            int ir = static_cast<int>(std::lround(pr)), ic = static_cast<int>(std::lround(pc));
            for (int r = 0; r < s.h; ++r)
                for (int c = 0; c < s.w; ++c) {
                    if (!s.coverage[static_cast<std::size_t>(r) * s.w + c]) continue;
                    int gr = ir + r, gc = ic + c;
                    if (gr < 0 || gc < 0 || gr >= cfg.height || gc >= cfg.width) continue;
                    Scalar col[3];
                    sprite_color_at(s, r, c, col);
                    for (int ch = 0; ch < 3; ++ch) out.at(gr, gc, ch) = col[ch];
                }
        } else {
            int r_lo = std::max(0, static_cast<int>(std::floor(pr)) - 1);
            int r_hi = std::min(cfg.height - 1, static_cast<int>(std::ceil(pr)) + s.h);
            int c_lo = std::max(0, static_cast<int>(std::floor(pc)) - 1);
            int c_hi = std::min(cfg.width - 1, static_cast<int>(std::ceil(pc)) + s.w);
            for (int r = r_lo; r <= r_hi; ++r)
                for (int c = c_lo; c <= c_hi; ++c) {
                    Scalar a = sprite_alpha(s, r - pr, c - pc);
                    if (a <= 0) continue;
                    Scalar col[3];
                    sprite_color_at(s, r - pr, c - pc, col);
                    for (int ch = 0; ch < 3; ++ch)
                        out.at(r, c, ch) = a * col[ch] + (1 - a) * out.at(r, c, ch);
                }
        }
    }
    return out;
}

namespace {

// index of the visible (topmost) sprite at each pixel, -1 for background
std::vector<int> owner_map(const SpriteScene& scene, Scalar t) {
    const auto& cfg = scene.config;
    std::vector<int> owner(static_cast<std::size_t>(cfg.height) * cfg.width, -1);
    for (std::size_t si = 0; si < scene.sprites.size(); ++si) {
        const Sprite& s = scene.sprites[si];
        Scalar pr = s.row0 + s.vrow * t, pc = s.col0 + s.vcol * t;
        for (int r = 0; r < cfg.height; ++r)
            for (int c = 0; c < cfg.width; ++c) {
                Scalar a = cfg.subpixel ? sprite_alpha(s, r - pr, c - pc)
                                        : ((std::lround(pr) <= r && r < std::lround(pr) + s.h &&
                                            std::lround(pc) <= c && c < std::lround(pc) + s.w)
                                               ? s.coverage[static_cast<std::size_t>(r - std::lround(pr)) * s.w +
                                                            (c - std::lround(pc))]
                                               : 0.0);
                if (a >= 0.5) owner[static_cast<std::size_t>(r) * cfg.width + c] = static_cast<int>(si);
            }
    }
    return owner;
}

}  // namespace

DenseMotionTruth scene_truth(const SpriteScene& scene, Scalar t, int gap) {
    const auto& cfg = scene.config;
    DenseMotionTruth truth;
    truth.h = cfg.height;
    truth.w = cfg.width;
    truth.flow_row = Mat::Zero(cfg.height, cfg.width);
    truth.flow_col = Mat::Zero(cfg.height, cfg.width);
    truth.occluded_next.assign(static_cast<std::size_t>(cfg.height) * cfg.width, 0);
    truth.owner = owner_map(scene, t);
    std::vector<int> owner_next = owner_map(scene, t + gap);

    for (int r = 0; r < cfg.height; ++r)
        for (int c = 0; c < cfg.width; ++c) {
            std::size_t idx = static_cast<std::size_t>(r) * cfg.width + c;
            int o = truth.owner[idx];
            Scalar fr, fc;
            if (o >= 0) {
                fr = static_cast<Scalar>(scene.sprites[static_cast<std::size_t>(o)].vrow) * gap;
                fc = static_cast<Scalar>(scene.sprites[static_cast<std::size_t>(o)].vcol) * gap;
            } else {
                fr = cfg.background_drift.drow * gap;
                fc = cfg.background_drift.dcol * gap;
            }
            truth.flow_row(r, c) = fr;
            truth.flow_col(r, c) = fc;
            Scalar dr = r + fr, dc = c + fc;
            int ir = static_cast<int>(std::lround(dr)), ic = static_cast<int>(std::lround(dc));
            if (ir < 0 || ic < 0 || ir >= cfg.height || ic >= cfg.width) {
                truth.occluded_next[idx] = 1;
            } else if (owner_next[static_cast<std::size_t>(ir) * cfg.width + ic] != o) {
                truth.occluded_next[idx] = 1;
            }
        }
    return truth;
}

std::pair<FramePair, DenseMotionTruth> generate_sprite_pair(const SpriteSceneConfig& config) {
    SpriteScene scene = sample_scene(config);
    Rng gap_rng(stream_seed(config.seed, "gap"));
    int gap = static_cast<int>(gap_rng.uniform_int(config.gap_frames_min, config.gap_frames_max));
    FramePair pair;
    pair.first = render_scene(scene, 0);
    pair.second = render_scene(scene, gap);
    pair.gap_frames = gap;
    pair.gap_ms = config.gap_ms_per_frame * gap;
    return {std::move(pair), scene_truth(scene, 0, gap)};
}

SpriteVideo generate_sprite_video(const SpriteSceneConfig& config, int num_frames) {
    if (num_frames < 2) throw ConfigError("sprite video: num_frames must be >= 2");
    SpriteVideo video;
    video.scene = sample_scene(config);
    for (int t = 0; t < num_frames; ++t) video.frames.push_back(render_scene(video.scene, t));
    for (int t = 0; t + 1 < num_frames; ++t)
        video.truths.push_back(scene_truth(video.scene, t, 1));

    std::vector<std::vector<int>> owners;
    owners.reserve(static_cast<std::size_t>(num_frames));
    for (int t = 0; t < num_frames; ++t) owners.push_back(owner_map(video.scene, t));

    Rng rng(stream_seed(config.seed, "annotation"));
    video.annotation.num_frames = num_frames;
    for (std::size_t si = 0; si < video.scene.sprites.size(); ++si) {
        const Sprite& s = video.scene.sprites[si];
        // centroid of coverage, plus one random covered offset
        Scalar sum_r = 0, sum_c = 0, cnt = 0;
        for (int r = 0; r < s.h; ++r)
            for (int c = 0; c < s.w; ++c)
                if (s.coverage[static_cast<std::size_t>(r) * s.w + c]) {
                    sum_r += r;
                    sum_c += c;
                    cnt += 1;
                }
        std::vector<std::pair<int, int>> offsets;
        if (cnt > 0) {
            int cr = static_cast<int>(std::lround(sum_r / cnt));
            int cc = static_cast<int>(std::lround(sum_c / cnt));
            if (!s.coverage[static_cast<std::size_t>(cr) * s.w + cc]) {
                // centroid fell off (thin disk); take first covered pixel
                for (int r = 0; r < s.h && offsets.empty(); ++r)
                    for (int c = 0; c < s.w; ++c)
                        if (s.coverage[static_cast<std::size_t>(r) * s.w + c]) {
                            offsets.emplace_back(r, c);
                            break;
                        }
            } else {
                offsets.emplace_back(cr, cc);
            }
            for (int tries = 0; tries < 64; ++tries) {
                int r = static_cast<int>(rng.uniform_int(s.h));
                int c = static_cast<int>(rng.uniform_int(s.w));
                if (s.coverage[static_cast<std::size_t>(r) * s.w + c] &&
                    std::make_pair(r, c) != offsets.front()) {
                    offsets.emplace_back(r, c);
                    break;
                }
            }
        }
        for (auto [orow, ocol] : offsets) {
            TrackPoint pt;
            for (int t = 0; t < num_frames; ++t) {
                Scalar pr = s.row0 + s.vrow * t + orow;
                Scalar pc = s.col0 + s.vcol * t + ocol;
                pt.pos.push_back({pr, pc});
                bool vis = false;
                int ir = static_cast<int>(std::lround(pr)), ic = static_cast<int>(std::lround(pc));
                if (ir >= 0 && ic >= 0 && ir < config.height && ic < config.width)
                    vis = owners[static_cast<std::size_t>(t)]
                                [static_cast<std::size_t>(ir) * config.width + ic] ==
                          static_cast<int>(si);
                pt.visible.push_back(vis ? 1 : 0);
            }
            video.annotation.points.push_back(std::move(pt));
        }
    }
    return video;
}

std::vector<PixelLoc> sample_query_pixels(const Frame& frame, int n, QueryStrategy strategy,
                                          std::uint64_t seed,
                                          const std::vector<std::uint8_t>* foreground) {
    if (n < 1) throw ConfigError("sample_query_pixels: n must be >= 1");
    const int total = frame.h * frame.w;
    if (n > total) throw ConfigError("sample_query_pixels: n exceeds pixel count");
    std::vector<PixelLoc> out;
    out.reserve(static_cast<std::size_t>(n));
    Rng rng(seed);
    switch (strategy) {
        case QueryStrategy::Grid: {
            int g = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
            for (int i = 0; i < g && static_cast<int>(out.size()) < n; ++i)
                for (int j = 0; j < g && static_cast<int>(out.size()) < n; ++j) {
                    int r = static_cast<int>((i + 0.5) * frame.h / g);
                    int c = static_cast<int>((j + 0.5) * frame.w / g);
                    out.push_back({static_cast<Scalar>(r), static_cast<Scalar>(c)});
                }
            break;
        }
        case QueryStrategy::UniformRandom: {
            for (int idx : rng.sample_without_replacement(total, n))
                out.push_back({static_cast<Scalar>(idx / frame.w), static_cast<Scalar>(idx % frame.w)});
            break;
        }
        case QueryStrategy::ForegroundBiased: {
            std::vector<int> fg_idx, bg_idx;
            if (foreground && static_cast<int>(foreground->size()) == total) {
                for (int i = 0; i < total; ++i)
                    ((*foreground)[static_cast<std::size_t>(i)] ? fg_idx : bg_idx).push_back(i);
            }
            if (fg_idx.empty()) {
                for (int idx : rng.sample_without_replacement(total, n))
                    out.push_back(
                        {static_cast<Scalar>(idx / frame.w), static_cast<Scalar>(idx % frame.w)});
                break;
            }
            int want_fg = std::min<int>((n + 1) / 2, static_cast<int>(fg_idx.size()));
            // sample beyond the half threshold when background runs short
            want_fg = std::max<int>(want_fg, n - static_cast<int>(bg_idx.size()));
            std::vector<int> chosen;
            for (int i : Rng(stream_seed(seed, "fg")).sample_without_replacement(
                     static_cast<int>(fg_idx.size()), want_fg))
                chosen.push_back(fg_idx[static_cast<std::size_t>(i)]);
            for (int i : Rng(stream_seed(seed, "bg")).sample_without_replacement(
                     static_cast<int>(bg_idx.size()), n - want_fg))
                chosen.push_back(bg_idx[static_cast<std::size_t>(i)]);
            for (int idx : chosen)
                out.push_back({static_cast<Scalar>(idx / frame.w), static_cast<Scalar>(idx % frame.w)});
            break;
        }
    }
    return out;
}

// --- portable_json interchange ------------------------------------------------

namespace {

std::string frame_name(int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%05d.png", t);
    return buf;
}

}  // namespace

std::string save_track_dataset(const TrackDataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    ordered_json root;
    root["videos"] = ordered_json::array();
    for (std::size_t vi = 0; vi < ds.videos.size(); ++vi) {
        const TrackVideo& v = ds.videos[vi];
        std::string id = v.id.empty() ? ("video_" + std::to_string(vi)) : v.id;
        std::string rel = "videos/" + id;
        fs::create_directories(fs::path(dir) / rel);
        for (std::size_t t = 0; t < v.frames.size(); ++t)
            save_png(v.frames[t], (fs::path(dir) / rel / frame_name(static_cast<int>(t))).string());
        ordered_json jv;
        jv["frames_path"] = rel;
        jv["points"] = ordered_json::array();
        for (const TrackPoint& p : v.annotation.points) {
            ordered_json jp;
            jp["xy"] = ordered_json::array();
            jp["visible"] = ordered_json::array();
            for (std::size_t t = 0; t < p.pos.size(); ++t) {
                jp["xy"].push_back({p.pos[t].col, p.pos[t].row});  // stored as (col,row)
                jp["visible"].push_back(static_cast<bool>(p.visible[t]));
            }
            jv["points"].push_back(std::move(jp));
        }
        root["videos"].push_back(std::move(jv));
    }
    std::string json_path = (fs::path(dir) / "dataset.json").string();
    std::ofstream out(json_path, std::ios::binary);
    out << root.dump(2) << "\n";
    return json_path;
}

namespace {

TrackDataset load_portable_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_track_dataset: cannot open " + path);
    ordered_json root;
    try {
        in >> root;
    } catch (const std::exception& e) {
        throw DataError(std::string("load_track_dataset: json parse failure: ") + e.what());
    }
    if (!root.contains("videos")) throw DataError("load_track_dataset: missing field 'videos'");
    TrackDataset ds;
    fs::path base = fs::path(path).parent_path();
    for (const auto& jv : root["videos"]) {
        if (!jv.contains("frames_path"))
            throw DataError("load_track_dataset: missing field 'frames_path'");
        if (!jv.contains("points")) throw DataError("load_track_dataset: missing field 'points'");
        TrackVideo video;
        fs::path fdir = base / jv["frames_path"].get<std::string>();
        video.id = fs::path(jv["frames_path"].get<std::string>()).filename().string();
        if (!fs::is_directory(fdir))
            throw DataError("load_track_dataset: frames_path is not a directory: " + fdir.string());
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(fdir))
            if (e.path().extension() == ".png") names.push_back(e.path().string());
        std::sort(names.begin(), names.end());
        for (const auto& nm : names) video.frames.push_back(load_png(nm));
        if (video.frames.empty()) throw DataError("load_track_dataset: no frames in " + fdir.string());
        int T = static_cast<int>(video.frames.size());
        int H = video.frames[0].h, W = video.frames[0].w;
        video.annotation.num_frames = T;
        for (const auto& jp : jv["points"]) {
            if (!jp.contains("xy")) throw DataError("load_track_dataset: missing field 'xy'");
            if (!jp.contains("visible")) throw DataError("load_track_dataset: missing field 'visible'");
            TrackPoint p;
            for (const auto& xy : jp["xy"]) {
                Scalar col = xy.at(0).get<Scalar>();
                Scalar row = xy.at(1).get<Scalar>();
                p.pos.push_back({row, col});
            }
            for (const auto& vis : jp["visible"]) p.visible.push_back(vis.get<bool>() ? 1 : 0);
            if (p.pos.size() != p.visible.size() || static_cast<int>(p.pos.size()) != T)
                throw DataError("load_track_dataset: trajectory length mismatch");
            for (std::size_t t = 0; t < p.pos.size(); ++t) {
                if (!p.visible[t]) continue;
                Scalar r = p.pos[t].row, c = p.pos[t].col;
                Scalar rc = std::clamp(r, Scalar(0), Scalar(H - 1));
                Scalar cc = std::clamp(c, Scalar(0), Scalar(W - 1));
                if (rc != r || cc != c) {
                    ++ds.clamp_warnings;
                    p.pos[t] = {rc, cc};
                }
            }
            video.annotation.points.push_back(std::move(p));
        }
        ds.videos.push_back(std::move(video));
    }
    return ds;
}

TrackDataset load_tapvid(const std::string& path) {
    pickle::Value root = pickle::load_file(path);
    TrackDataset ds;
    for (const auto& [name, entry] : root.dict_entries()) {
        const pickle::Value& e = *entry;
        const pickle::NdArray& vid = e.require("video").as_array();
        const pickle::NdArray& pts = e.require("points").as_array();
        const pickle::NdArray& occ = e.require("occluded").as_array();
        if (vid.shape.size() != 4 || vid.shape[3] != 3)
            throw DataError("tapvid pickle: video must be [T,H,W,3]");
        if (pts.shape.size() != 3 || pts.shape[2] != 2)
            throw DataError("tapvid pickle: points must be [N,T,2]");
        if (occ.shape.size() != 2) throw DataError("tapvid pickle: occluded must be [N,T]");
        std::int64_t T = vid.shape[0], H = vid.shape[1], W = vid.shape[2];
        std::int64_t N = pts.shape[0];
        if (pts.shape[1] != T || occ.shape[0] != N || occ.shape[1] != T)
            throw DataError("tapvid pickle: inconsistent track shapes");
        TrackVideo video;
        video.id = name;
        for (std::int64_t t = 0; t < T; ++t) {
            Image img(static_cast<int>(H), static_cast<int>(W));
            for (std::int64_t r = 0; r < H; ++r)
                for (std::int64_t c = 0; c < W; ++c)
                    for (int ch = 0; ch < 3; ++ch)
                        img.at(static_cast<int>(r), static_cast<int>(c), ch) =
                            vid.u8_at({t, r, c, ch}) / 255.0;
            video.frames.push_back(std::move(img));
        }
        video.annotation.num_frames = static_cast<int>(T);
        for (std::int64_t n = 0; n < N; ++n) {
            TrackPoint p;
            for (std::int64_t t = 0; t < T; ++t) {
                Scalar x = pts.f64_at({n, t, 0});  // (x, y) = (col, row), px units
                Scalar y = pts.f64_at({n, t, 1});
                bool occluded = occ.bool_at({n, t});
                Scalar rc = std::clamp(y, Scalar(0), Scalar(H - 1));
                Scalar cc = std::clamp(x, Scalar(0), Scalar(W - 1));
                if (!occluded && (rc != y || cc != x)) ++ds.clamp_warnings;
                p.pos.push_back({rc, cc});
                p.visible.push_back(occluded ? 0 : 1);
            }
            video.annotation.points.push_back(std::move(p));
        }
        ds.videos.push_back(std::move(video));
    }
    return ds;
}

}  // namespace

TrackDataset load_track_dataset(const std::string& path, TrackFormat format) {
    switch (format) {
        case TrackFormat::PortableJson:
            return load_portable_json(path);
        case TrackFormat::TapvidPickle:
            return load_tapvid(path);
    }
    throw ConfigError("load_track_dataset: unknown format");
}

}  // namespace optcwm
