#include "optcwm/metrics.hpp"

#include <cmath>
#include <cstdio>

#include <json.hpp>

namespace optcwm {

std::vector<EvalQuery> build_first_protocol(const TrackAnnotation& annotation,
                                            const std::string& video_id, int* skipped_points) {
    std::vector<EvalQuery> out;
    int skipped = 0;
    for (std::size_t pi = 0; pi < annotation.points.size(); ++pi) {
        const TrackPoint& p = annotation.points[pi];
        int first = -1;
        for (std::size_t t = 0; t < p.visible.size(); ++t)
            if (p.visible[t]) {
                first = static_cast<int>(t);
                break;
            }
        if (first < 0) {
            ++skipped;
            continue;
        }
        for (int t = first + 1; t < annotation.num_frames; ++t) {
            EvalQuery q;
            q.video_id = video_id;
            q.point_index = static_cast<int>(pi);
            q.query_frame = first;
            q.query_loc = p.pos[static_cast<std::size_t>(first)];
            q.target_frame = t;
            q.gt_loc = p.pos[static_cast<std::size_t>(t)];
            q.gt_visible = p.visible[static_cast<std::size_t>(t)] != 0;
            out.push_back(std::move(q));
        }
    }
    if (skipped_points) *skipped_points = skipped;
    return out;
}

std::vector<EvalQuery> build_cfg_protocol(const TrackAnnotation& annotation,
                                          const std::string& video_id, int gap) {
    std::vector<EvalQuery> out;
    for (std::size_t pi = 0; pi < annotation.points.size(); ++pi) {
        const TrackPoint& p = annotation.points[pi];
        for (int t = 0; t + gap < annotation.num_frames; ++t) {
            if (!p.visible[static_cast<std::size_t>(t)]) continue;
            EvalQuery q;
            q.video_id = video_id;
            q.point_index = static_cast<int>(pi);
            q.query_frame = t;
            q.query_loc = p.pos[static_cast<std::size_t>(t)];
            q.target_frame = t + gap;
            q.gt_loc = p.pos[static_cast<std::size_t>(t + gap)];
            q.gt_visible = p.visible[static_cast<std::size_t>(t + gap)] != 0;
            out.push_back(std::move(q));
        }
    }
    return out;
}

PixelLoc rescale_to_eval_frame(PixelLoc loc, int native_h, int native_w, int eval_h, int eval_w) {
    return {loc.row * static_cast<Scalar>(eval_h) / native_h,
            loc.col * static_cast<Scalar>(eval_w) / native_w};
}

MetricsReport compute_metrics(const std::vector<EvalQuery>& queries,
                              const std::vector<EvalPrediction>& predictions) {
    if (queries.size() != predictions.size())
        throw DataError("compute_metrics: one prediction per query required");
    MetricsReport rep;
    rep.num_queries = static_cast<std::int64_t>(queries.size());

    std::int64_t visible_n = 0;
    Scalar dist_sum = 0;
    std::int64_t occ_correct = 0;
    std::int64_t of1_tp = 0, of1_fp = 0, of1_fn = 0;  // occluded = positive class
    std::vector<std::int64_t> within(rep.thresholds.size(), 0);
    std::vector<std::int64_t> aj_tp(rep.thresholds.size(), 0), aj_fp(rep.thresholds.size(), 0),
        aj_fn(rep.thresholds.size(), 0);

    for (std::size_t i = 0; i < queries.size(); ++i) {
        const EvalQuery& q = queries[i];
        const EvalPrediction& p = predictions[i];
        const bool pred_visible = p.visible;
        Scalar dist = std::hypot(p.loc.row - q.gt_loc.row, p.loc.col - q.gt_loc.col);
        if (!q.gt_visible) ++rep.num_gt_occluded;
        if (!pred_visible) ++rep.num_pred_occluded;

        if (q.gt_visible) {
            ++visible_n;
            dist_sum += dist;
            for (std::size_t k = 0; k < rep.thresholds.size(); ++k)
                if (dist < rep.thresholds[k]) ++within[k];
        }
        if (q.gt_visible == pred_visible) ++occ_correct;
        if (!q.gt_visible && !pred_visible) ++of1_tp;
        if (q.gt_visible && !pred_visible) ++of1_fp;
        if (!q.gt_visible && pred_visible) ++of1_fn;

        // one bucket per query per threshold
        for (std::size_t k = 0; k < rep.thresholds.size(); ++k) {
            bool correct = q.gt_visible && pred_visible && dist < rep.thresholds[k];
            if (correct)
                ++aj_tp[k];
            else if (pred_visible)
                ++aj_fp[k];
            else if (q.gt_visible)
                ++aj_fn[k];
            // gt occluded & predicted occluded: true negative, not counted
        }
    }

    if (visible_n > 0) {
        rep.ad = dist_sum / static_cast<Scalar>(visible_n);
        Scalar dsum = 0;
        for (std::size_t k = 0; k < rep.thresholds.size(); ++k) {
            Scalar frac = static_cast<Scalar>(within[k]) / static_cast<Scalar>(visible_n);
            rep.delta_at.push_back(frac);
            dsum += frac;
        }
        rep.delta_avg = dsum / static_cast<Scalar>(rep.thresholds.size());
    }
    if (!queries.empty()) {
        rep.oa = static_cast<Scalar>(occ_correct) / static_cast<Scalar>(queries.size());
        Scalar denom = static_cast<Scalar>(2 * of1_tp + of1_fp + of1_fn);
        rep.of1 = denom > 0 ? 2.0 * of1_tp / denom : 1.0;  // no occlusions anywhere: vacuous 1
        Scalar aj_sum = 0;
        for (std::size_t k = 0; k < rep.thresholds.size(); ++k) {
            std::int64_t denom_k = aj_tp[k] + aj_fp[k] + aj_fn[k];
            aj_sum += denom_k > 0 ? static_cast<Scalar>(aj_tp[k]) / denom_k : 1.0;
        }
        rep.aj = aj_sum / static_cast<Scalar>(rep.thresholds.size());
    }
    return rep;
}

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    auto put = [&](const char* key, const std::optional<Scalar>& v) {
        if (v)
            j[key] = *v;
        else
            j[key] = nullptr;
    };
    put("aj", aj);
    put("ad", ad);
    put("delta_avg", delta_avg);
    put("oa", oa);
    put("of1", of1);
    j["thresholds"] = thresholds;
    j["delta_at"] = delta_at;
    j["num_queries"] = num_queries;
    j["num_gt_occluded"] = num_gt_occluded;
    j["num_pred_occluded"] = num_pred_occluded;
    return j.dump(2);
}

std::string MetricsReport::to_table() const {
    auto cell = [](const std::optional<Scalar>& v) {
        char buf[32];
        if (v)
            std::snprintf(buf, sizeof(buf), "%10.4f", *v);
        else
            std::snprintf(buf, sizeof(buf), "%10s", "-");
        return std::string(buf);
    };
    std::string out;
    out += "        AJ        AD    <d_avg        OA       OF1\n";
    out += cell(aj) + cell(ad) + cell(delta_avg) + cell(oa) + cell(of1) + "\n";
    return out;
}

bool cycle_consistency_occlusion(const FlowFn& forward, const FlowFn& backward, PixelLoc p1, int h,
                                 int w, Scalar threshold) {
    PixelLoc fwd = forward(p1);
    if (fwd.row < 0 || fwd.col < 0 || fwd.row > h - 1 || fwd.col > w - 1) return true;
    PixelLoc back = backward(fwd);
    Scalar err = std::hypot(back.row - p1.row, back.col - p1.col);
    return err > threshold;
}

}  // namespace optcwm
