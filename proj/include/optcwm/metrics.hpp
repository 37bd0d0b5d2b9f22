#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "optcwm/common.hpp"
#include "optcwm/corpus.hpp"

namespace optcwm {

struct EvalQuery {
    std::string video_id;
    int point_index = 0;
    int query_frame = 0;
    PixelLoc query_loc;
    int target_frame = 0;
    PixelLoc gt_loc;
    bool gt_visible = true;
};

struct EvalPrediction {
    PixelLoc loc;
    bool visible = true;
};

struct MetricsReport {
    std::optional<Scalar> aj;
    std::optional<Scalar> ad;         // px, gt-visible queries only
    std::optional<Scalar> delta_avg;  // mean of per-threshold fractions
    std::optional<Scalar> oa;
    std::optional<Scalar> of1;
    std::vector<Scalar> thresholds = {1, 2, 4, 8, 16};
    std::vector<Scalar> delta_at;  // per-threshold fractions (empty when undefined)
    std::int64_t num_queries = 0;
    std::int64_t num_gt_occluded = 0;
    std::int64_t num_pred_occluded = 0;

    std::string to_json() const;  // stable key order
    std::string to_table() const;  // fixed-width row matching the AJ/AD/<d/OA/OF1 column set
};

// First protocol: each point tracked from its first visible frame to every
// later frame. Never-visible points are skipped (and counted).
std::vector<EvalQuery> build_first_protocol(const TrackAnnotation& annotation,
                                            const std::string& video_id,
                                            int* skipped_points = nullptr);

// CFG protocol: all (t, t+gap) pairs with the point visible at t.
std::vector<EvalQuery> build_cfg_protocol(const TrackAnnotation& annotation,
                                          const std::string& video_id, int gap = 5);

PixelLoc rescale_to_eval_frame(PixelLoc loc, int native_h, int native_w, int eval_h = 256,
                               int eval_w = 256);

MetricsReport compute_metrics(const std::vector<EvalQuery>& queries,
                              const std::vector<EvalPrediction>& predictions);

using FlowFn = std::function<PixelLoc(PixelLoc)>;  // maps a location to the other frame

// occluded iff the forward-backward round trip misses p1 by more than
// `threshold` px (strict), or the forward prediction leaves the canvas
bool cycle_consistency_occlusion(const FlowFn& forward, const FlowFn& backward, PixelLoc p1,
                                 int h, int w, Scalar threshold = 6.0);

}  // namespace optcwm
