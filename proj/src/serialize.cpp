#include "optcwm/serialize.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace optcwm {

namespace {

constexpr char kMagic[8] = {'O', 'C', 'W', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("checkpoint: truncated");
    return v;
}

void put_string(std::ostream& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
    std::uint32_t n = get<std::uint32_t>(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw DataError("checkpoint: truncated string");
    return s;
}

void put_mat(std::ostream& out, const Mat& m) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(m.size())));
}

Mat get_mat(std::istream& in) {
    std::uint32_t r = get<std::uint32_t>(in);
    std::uint32_t c = get<std::uint32_t>(in);
    Mat m(r, c);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(m.size())));
    if (!in) throw DataError("checkpoint: truncated tensor");
    return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const ag::ParamStore& params, const ag::AdamW* optimizer, std::int64_t step) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot write " + path);
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put_string(out, config_json);
    put<std::int64_t>(out, step);
    put<std::uint64_t>(out, params.params().size());
    for (const auto& p : params.params()) {
        put_string(out, p.name);
        put<std::uint8_t>(out, p.weight_decay ? 1 : 0);
        put_mat(out, p.var->val);
    }
    bool has_opt = optimizer != nullptr && !const_cast<ag::AdamW*>(optimizer)->moment1().empty();
    put<std::uint8_t>(out, has_opt ? 1 : 0);
    if (has_opt) {
        auto* opt = const_cast<ag::AdamW*>(optimizer);
        put<std::int64_t>(out, opt->step_count());
        for (const Mat& m : opt->moment1()) put_mat(out, m);
        for (const Mat& m : opt->moment2()) put_mat(out, m);
    }
}

CheckpointMeta load_checkpoint(const std::string& path, ag::ParamStore& params, ag::AdamW* optimizer) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw DataError("checkpoint: bad magic in " + path);
    if (get<std::uint32_t>(in) != kVersion) throw DataError("checkpoint: unsupported version");
    CheckpointMeta meta;
    meta.config_json = get_string(in);
    meta.step = get<std::int64_t>(in);
    std::uint64_t n = get<std::uint64_t>(in);
    if (n != params.params().size()) throw DataError("checkpoint: parameter count mismatch");
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string name = get_string(in);
        get<std::uint8_t>(in);  // weight-decay flag, informational
        Mat m = get_mat(in);
        auto& p = params.params()[i];
        if (p.name != name) throw DataError("checkpoint: parameter order mismatch at " + name);
        if (p.var->val.rows() != m.rows() || p.var->val.cols() != m.cols())
            throw DataError("checkpoint: shape mismatch for " + name);
        p.var->val = std::move(m);
    }
    meta.has_optimizer = get<std::uint8_t>(in) != 0;
    if (meta.has_optimizer && optimizer) {
        optimizer->set_step_count(static_cast<int>(get<std::int64_t>(in)));
        optimizer->moment1().clear();
        optimizer->moment2().clear();
        for (std::uint64_t i = 0; i < n; ++i) optimizer->moment1().push_back(get_mat(in));
        for (std::uint64_t i = 0; i < n; ++i) optimizer->moment2().push_back(get_mat(in));
    }
    return meta;
}

std::string peek_checkpoint_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw DataError("checkpoint: bad magic in " + path);
    if (get<std::uint32_t>(in) != kVersion) throw DataError("checkpoint: unsupported version");
    return get_string(in);
}

void CsvTable::add_row(std::vector<std::string> row) {
    if (!header.empty() && row.size() != header.size())
        throw DataError("csv: row width mismatch");
    rows.push_back(std::move(row));
}

void CsvTable::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("csv: cannot write " + path);
    auto emit = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out << ',';
            out << cells[i];
        }
        out << '\n';
    };
    emit(header);
    for (const auto& r : rows) emit(r);
}

CsvTable CsvTable::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("csv: cannot open " + path);
    CsvTable t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!ss && line.back() == ',') cells.push_back("");
        if (first) {
            t.header = std::move(cells);
            first = false;
        } else {
            t.rows.push_back(std::move(cells));
        }
    }
    return t;
}

std::string format_scalar(Scalar v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace {

void draw_line(Image& img, Scalar r0, Scalar c0, Scalar r1, Scalar c1, const Scalar color[3]) {
    int steps = static_cast<int>(std::max(std::abs(r1 - r0), std::abs(c1 - c0))) * 2 + 1;
    for (int i = 0; i <= steps; ++i) {
        Scalar f = static_cast<Scalar>(i) / steps;
        int r = static_cast<int>(std::lround(r0 + f * (r1 - r0)));
        int c = static_cast<int>(std::lround(c0 + f * (c1 - c0)));
        if (r < 0 || c < 0 || r >= img.h || c >= img.w) continue;
        for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = color[ch];
    }
}

// blocky 3x5 digit font, enough for axis labels
void draw_text(Image& img, int r0, int c0, const std::string& text) {
    static const char* glyphs = "0123456789.-e+";
    static const std::uint16_t bits[] = {
        0x7B6F, 0x2492, 0x73E7, 0x73CF, 0x5BC9, 0x79CF, 0x79EF, 0x7249, 0x7BEF, 0x7BCF,
        0x0008, 0x01C0, 0x7BCF, 0x05D0};
    const Scalar black[3] = {0, 0, 0};
    int c = c0;
    for (char ch : text) {
        const char* pos = std::strchr(glyphs, ch);
        if (!pos) {
            c += 4;
            continue;
        }
        std::uint16_t g = bits[pos - glyphs];
        for (int rr = 0; rr < 5; ++rr)
            for (int cc = 0; cc < 3; ++cc)
                if (g & (1u << (rr * 3 + cc)))
                    if (r0 + rr >= 0 && c + cc >= 0 && r0 + rr < img.h && c + cc < img.w)
                        for (int k = 0; k < 3; ++k) img.at(r0 + rr, c + cc, k) = black[k];
        c += 4;
    }
}

}  // namespace

void save_line_plot(const std::string& path, const std::vector<PlotSeries>& series,
                    const std::string& title, int width, int height) {
    Image img(height, width, 1.0);
    const int m_left = 48, m_right = 12, m_top = 20, m_bottom = 28;
    Scalar xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool any = false;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            if (!any) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                any = true;
            }
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    auto X = [&](Scalar x) {
        return m_left + (x - xmin) / (xmax - xmin) * (width - m_left - m_right);
    };
    auto Y = [&](Scalar y) {
        return height - m_bottom - (y - ymin) / (ymax - ymin) * (height - m_top - m_bottom);
    };
    const Scalar axis[3] = {0, 0, 0};
    draw_line(img, Y(ymin), X(xmin), Y(ymin), X(xmax), axis);
    draw_line(img, Y(ymin), X(xmin), Y(ymax), X(xmin), axis);
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%g", ymax);
    draw_text(img, m_top - 6, 4, buf);
    std::snprintf(buf, sizeof(buf), "%g", ymin);
    draw_text(img, height - m_bottom - 5, 4, buf);
    std::snprintf(buf, sizeof(buf), "%g", xmin);
    draw_text(img, height - m_bottom + 6, m_left, buf);
    std::snprintf(buf, sizeof(buf), "%g", xmax);
    draw_text(img, height - m_bottom + 6, width - m_right - 30, buf);
    draw_text(img, 6, m_left, title.substr(0, 40));
    for (const auto& s : series) {
        for (std::size_t i = 0; i + 1 < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i]) || !std::isfinite(s.y[i + 1])) continue;
            draw_line(img, Y(s.y[i]), X(s.x[i]), Y(s.y[i + 1]), X(s.x[i + 1]), s.color);
        }
    }
    save_png(img, path);
}

}  // namespace optcwm
