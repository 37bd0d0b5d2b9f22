#pragma once

#include <optional>
#include <string>
#include <vector>

#include "optcwm/autograd.hpp"
#include "optcwm/image.hpp"

namespace optcwm {

// Single-file checkpoint archive: magic, version, a JSON config block, named
// parameter tensors, optional optimizer state, and a step counter. All fields
// little-endian, no timestamps (re-runs are byte identical).
struct CheckpointMeta {
    std::string config_json;
    std::int64_t step = 0;
    bool has_optimizer = false;
};

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const ag::ParamStore& params, const ag::AdamW* optimizer, std::int64_t step);

// Loads values into an existing store (names and shapes must match). Returns
// the metadata; restores optimizer state when both sides have it.
CheckpointMeta load_checkpoint(const std::string& path, ag::ParamStore& params,
                               ag::AdamW* optimizer = nullptr);

// Reads only the embedded config JSON.
std::string peek_checkpoint_config(const std::string& path);

// --- CSV -----------------------------------------------------------------------
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::vector<std::string> row);
    void save(const std::string& path) const;
    static CsvTable load(const std::string& path);
};

std::string format_scalar(Scalar v);  // round-trip exact (%.17g)

// --- tiny plot rasterizer --------------------------------------------------------
struct PlotSeries {
    std::string label;
    std::vector<Scalar> x, y;
    Scalar color[3] = {0.1, 0.3, 0.8};
};

// Renders polyline series with axes onto a white canvas and writes a PNG.
void save_line_plot(const std::string& path, const std::vector<PlotSeries>& series,
                    const std::string& title, int width = 640, int height = 420);

}  // namespace optcwm
