#pragma once

#include <optional>
#include <string>
#include <vector>

#include "optcwm/common.hpp"
#include "optcwm/image.hpp"

namespace optcwm {

enum class SpriteShape { Rect, Disk, TexturePatch };
enum class BackgroundMode { Solid, Noise, Texture };

struct SpriteSceneConfig {
    int height = 32;
    int width = 32;
    int num_sprites = 2;
    std::vector<SpriteShape> shapes = {SpriteShape::Rect, SpriteShape::Disk, SpriteShape::TexturePatch};
    int min_size = 6;
    int max_size = 12;
    int max_speed = 3;  // per-axis px/frame, integer velocities sampled in [-max_speed, max_speed]
    BackgroundMode background = BackgroundMode::Solid;
    bool with_occluder = false;  // force at least one overlapping sprite pair
    bool subpixel = false;       // bilinear splat rendering; truth approximate to 0.5 px
    FlowVec background_drift{0, 0};  // global drift px/frame (camera motion)
    int gap_frames_min = 1;
    int gap_frames_max = 1;
    Scalar gap_ms_per_frame = 150.0;  // metadata only
    std::uint64_t seed = 0;

    void validate() const;
};

struct Sprite {
    SpriteShape shape = SpriteShape::Rect;
    Scalar row0 = 0, col0 = 0;  // top-left at frame 0
    int h = 0, w = 0;
    Scalar color[3] = {0, 0, 0};
    std::vector<std::uint8_t> coverage;  // h*w, 1 where the sprite paints
    std::vector<Scalar> texture;         // h*w*3 when shape == TexturePatch
    int vrow = 0, vcol = 0;              // px per frame
    // draw order position: sprites are painted in increasing depth_rank, so
    // the largest rank is nearest to the camera
    int depth_rank = 0;
};

struct SpriteScene {
    SpriteSceneConfig config;
    Image background;
    std::vector<Sprite> sprites;  // sorted by depth_rank ascending (far -> near)
};

struct DenseMotionTruth {
    int h = 0, w = 0;
    Mat flow_row;  // H x W, px
    Mat flow_col;
    std::vector<std::uint8_t> occluded_next;  // H*W
    std::vector<int> owner;                   // H*W; sprite index in scene order, -1 = background

    bool occ(int r, int c) const { return occluded_next[static_cast<std::size_t>(r) * w + c] != 0; }
    FlowVec flow_at(int r, int c) const { return {flow_row(r, c), flow_col(r, c)}; }
};

struct TrackPoint {
    std::vector<PixelLoc> pos;            // one per frame
    std::vector<std::uint8_t> visible;    // one per frame
};

struct TrackAnnotation {
    std::vector<TrackPoint> points;
    int num_frames = 0;
};

struct TrackVideo {
    std::string id;
    std::vector<Frame> frames;
    TrackAnnotation annotation;
};

struct TrackDataset {
    std::vector<TrackVideo> videos;
    int clamp_warnings = 0;
};

// --- scene generation -------------------------------------------------------
SpriteScene sample_scene(const SpriteSceneConfig& config);
Image render_scene(const SpriteScene& scene, Scalar t);
// exact forward truth between scene times t and t + gap
DenseMotionTruth scene_truth(const SpriteScene& scene, Scalar t, int gap);

std::pair<FramePair, DenseMotionTruth> generate_sprite_pair(const SpriteSceneConfig& config);

struct SpriteVideo {
    std::vector<Frame> frames;
    TrackAnnotation annotation;
    std::vector<DenseMotionTruth> truths;  // num_frames - 1 consecutive truths
    SpriteScene scene;
};
SpriteVideo generate_sprite_video(const SpriteSceneConfig& config, int num_frames);

// --- query sampling ----------------------------------------------------------
enum class QueryStrategy { UniformRandom, Grid, ForegroundBiased };
std::vector<PixelLoc> sample_query_pixels(const Frame& frame, int n, QueryStrategy strategy,
                                          std::uint64_t seed,
                                          const std::vector<std::uint8_t>* foreground = nullptr);

// --- interchange --------------------------------------------------------------
enum class TrackFormat { PortableJson, TapvidPickle };

TrackDataset load_track_dataset(const std::string& path, TrackFormat format);
// Writes dataset.json plus one PNG directory per video under `dir`; returns
// the path to the written JSON file.
std::string save_track_dataset(const TrackDataset& ds, const std::string& dir);

}  // namespace optcwm
