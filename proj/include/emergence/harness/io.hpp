#pragma once

// Output plumbing: locale-independent number formatting, CSV tables,
// atomic file writes, SHA-256 digests and a small SVG line-plot writer.

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <locale>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "emergence/common.hpp"

namespace emergence::harness {

/// Shortest round-trip representation; independent of the C locale.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

inline std::string format_number(std::size_t v) { return std::to_string(v); }
inline std::string format_number(long v) { return std::to_string(v); }
inline std::string format_number(int v) { return std::to_string(v); }

/// Parses a double with from_chars (no locale).
inline bool parse_number(std::string_view s, double& out) {
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    const std::vector<std::string>& header() const noexcept { return header_; }
    std::size_t rows() const noexcept { return rows_.size(); }

    /// Appends one row of already formatted cells.
    void add_row(std::vector<std::string> cells) {
        require(cells.size() == header_.size(), "CsvTable: row width does not match the header");
        rows_.push_back(std::move(cells));
    }

    template <class... Ts>
    void add(const Ts&... values) {
        add_row({cell(values)...});
    }

    std::string str() const {
        std::string out = join(header_);
        for (const auto& r : rows_) out += join(r);
        return out;
    }

    /// Column as numbers (for plotting).
    std::vector<double> column(std::string_view name) const {
        const auto it = std::find(header_.begin(), header_.end(), name);
        require(it != header_.end(), "CsvTable: no column " + std::string(name));
        const auto c = static_cast<std::size_t>(it - header_.begin());
        std::vector<double> out;
        for (const auto& r : rows_) {
            double v = std::numeric_limits<double>::quiet_NaN();
            parse_number(r[c], v);
            out.push_back(v);
        }
        return out;
    }

private:
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    template <class T>
    static std::string cell(const T& v) {
        return format_number(v);
    }
    static std::string join(const std::vector<std::string>& cells) {
        std::string line;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) line += ',';
            line += cells[i];
        }
        line += '\n';
        return line;
    }

    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
inline void atomic_write(const std::filesystem::path& path, std::string_view content) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw IoError("SHA-256 digest failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xF];
    }
    return out;
}

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> error; ///< optional vertical error bars
    bool points = false;       ///< markers instead of a polyline
};

struct PlotSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_y = false;
};

namespace detail {

inline std::string escape_xml(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string fixed(double v, int digits = 2) {
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::fixed, digits);
    return std::string(buf.data(), res.ptr);
}

inline std::string tick_label(double v) {
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::general, 4);
    return std::string(buf.data(), res.ptr);
}

}  // namespace detail

/// Renders series as a standalone SVG document.
inline std::string render_svg(const PlotSpec& spec, const std::vector<Series>& series) {
    constexpr double width = 640, height = 420, left = 70, right = 20, top = 40, bottom = 55;
    static constexpr std::array<const char*, 6> colors = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

    auto ty = [&](double v) { return spec.log_y ? (v > 0 ? std::log10(v) : std::numeric_limits<double>::quiet_NaN()) : v; };
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            const double yv = ty(s.y[i]);
            if (!std::isfinite(s.x[i]) || !std::isfinite(yv)) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, yv);
            y1 = std::max(y1, yv);
        }
    }
    if (!std::isfinite(x0)) { x0 = 0; x1 = 1; y0 = 0; y1 = 1; }
    if (x1 == x0) { x0 -= 0.5; x1 += 0.5; }
    if (y1 == y0) { y0 -= 0.5; y1 += 0.5; }
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;

    const double pw = width - left - right, ph = height - top - bottom;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    std::ostringstream o;
    o.imbue(std::locale::classic());
    o << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << width << R"(" height=")" << height
      << R"(" font-family="sans-serif" font-size="12">)" << '\n';
    o << R"(<rect width="100%" height="100%" fill="white"/>)" << '\n';
    o << R"(<text x=")" << width / 2 << R"(" y="22" text-anchor="middle" font-size="14">)" << detail::escape_xml(spec.title)
      << "</text>\n";
    o << R"(<rect x=")" << left << R"(" y=")" << top << R"(" width=")" << pw << R"(" height=")" << ph
      << R"(" fill="none" stroke="black"/>)" << '\n';
    for (int k = 0; k <= 4; ++k) {
        const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
        o << R"(<text x=")" << detail::fixed(px(xv)) << R"(" y=")" << detail::fixed(top + ph + 18)
          << R"(" text-anchor="middle">)" << detail::tick_label(xv) << "</text>\n";
        const std::string ylab = spec.log_y ? "1e" + detail::tick_label(yv) : detail::tick_label(yv);
        o << R"(<text x=")" << detail::fixed(left - 6) << R"(" y=")" << detail::fixed(py(yv) + 4)
          << R"(" text-anchor="end">)" << ylab << "</text>\n";
    }
    o << R"(<text x=")" << left + pw / 2 << R"(" y=")" << height - 12 << R"(" text-anchor="middle">)"
      << detail::escape_xml(spec.x_label) << "</text>\n";
    o << R"(<text x="16" y=")" << top + ph / 2 << R"(" text-anchor="middle" transform="rotate(-90 16 )" << top + ph / 2
      << R"lit()">)lit" << detail::escape_xml(spec.y_label) << "</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = colors[k % colors.size()];
        if (s.points) {
            for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
                const double yv = ty(s.y[i]);
                if (!std::isfinite(s.x[i]) || !std::isfinite(yv)) continue;
                if (i < s.error.size() && !spec.log_y) {
                    o << R"(<line x1=")" << detail::fixed(px(s.x[i])) << R"(" x2=")" << detail::fixed(px(s.x[i]))
                      << R"(" y1=")" << detail::fixed(py(yv - s.error[i])) << R"(" y2=")"
                      << detail::fixed(py(yv + s.error[i])) << R"(" stroke=")" << color << R"("/>)" << '\n';
                }
                o << R"(<circle cx=")" << detail::fixed(px(s.x[i])) << R"(" cy=")" << detail::fixed(py(yv))
                  << R"(" r="2.5" fill=")" << color << R"("/>)" << '\n';
            }
        } else {
            o << R"(<polyline fill="none" stroke-width="1.5" stroke=")" << color << R"(" points=")";
            for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
                const double yv = ty(s.y[i]);
                if (!std::isfinite(s.x[i]) || !std::isfinite(yv)) continue;
                o << detail::fixed(px(s.x[i])) << ',' << detail::fixed(py(yv)) << ' ';
            }
            o << R"("/>)" << '\n';
        }
        o << R"(<text x=")" << detail::fixed(left + pw - 8) << R"(" y=")" << detail::fixed(top + 16 + 15.0 * k)
          << R"(" text-anchor="end" fill=")" << color << R"(">)" << detail::escape_xml(s.label) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

}  // namespace emergence::harness
