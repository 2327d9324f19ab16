// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#include "dfa/report.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace dfa {

auto format_real(double v) -> std::string
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, ptr};
}

void write_epoch_csv(std::ostream& out, const std::vector<EpochRecord>& epochs)
{
    out << epoch_csv_header << '\n';
    for (const auto& e : epochs) {
        out << e.epoch << ',' << format_real(e.lr) << ',' << format_real(e.train_loss) << ','
            << format_real(e.train_acc) << ',' << format_real(e.val_metric) << ','
            << format_real(e.wall_clock_s) << '\n';
    }
}

auto read_epoch_csv(std::istream& in) -> std::vector<EpochRecord>
{
    std::string line;
    if (!std::getline(in, line) || line != epoch_csv_header) {
        throw FormatError("epoch CSV: expected header '" + std::string{epoch_csv_header} + "'", 1);
    }
    std::vector<EpochRecord> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ss{line};
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            f.push_back(cell);
        }
        EpochRecord e;
        auto num = [&](const std::string& s, auto& v) {
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            return ec == std::errc{} && p == s.data() + s.size();
        };
        if (f.size() != 6 || !num(f[0], e.epoch) || !num(f[1], e.lr) || !num(f[2], e.train_loss)
            || !num(f[3], e.train_acc) || !num(f[4], e.val_metric) || !num(f[5], e.wall_clock_s)) {
            throw FormatError("epoch CSV line " + std::to_string(lineno) + ": malformed row", lineno);
        }
        out.push_back(e);
    }
    return out;
}

namespace {

auto xml_escape(const std::string& s) -> std::string
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

auto fixed(double v) -> std::string
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

struct Panel
{
    double top;
    double height;
    double lo;
    double hi;
};

constexpr double left = 60;
constexpr double right = 620;

auto polyline(const std::vector<EpochRecord>& epochs, const Panel& p, double EpochRecord::*field,
              const char* colour) -> std::string
{
    if (epochs.empty()) {
        return {};
    }
    const double span = std::max<double>(1.0, static_cast<double>(epochs.size() - 1));
    const double range = p.hi > p.lo ? p.hi - p.lo : 1.0;
    std::string pts;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
        const double x = left + (right - left) * static_cast<double>(i) / span;
        const double v = std::clamp(epochs[i].*field, p.lo, p.hi);
        const double y = p.top + p.height * (1.0 - (v - p.lo) / range);
        pts += (i ? " " : "") + fixed(x) + ',' + fixed(y);
    }
    return "  <polyline fill=\"none\" stroke=\"" + std::string{colour}
           + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
}

auto frame(const Panel& p, const std::string& label) -> std::string
{
    std::string s = "  <rect x=\"" + fixed(left) + "\" y=\"" + fixed(p.top) + "\" width=\""
                    + fixed(right - left) + "\" height=\"" + fixed(p.height)
                    + "\" fill=\"none\" stroke=\"#888888\"/>\n";
    s += "  <text x=\"" + fixed(left) + "\" y=\"" + fixed(p.top - 6) + "\" font-size=\"12\">"
         + xml_escape(label) + "</text>\n";
    s += "  <text x=\"" + fixed(left - 6) + "\" y=\"" + fixed(p.top + 10)
         + "\" font-size=\"10\" text-anchor=\"end\">" + fixed(p.hi) + "</text>\n";
    s += "  <text x=\"" + fixed(left - 6) + "\" y=\"" + fixed(p.top + p.height)
         + "\" font-size=\"10\" text-anchor=\"end\">" + fixed(p.lo) + "</text>\n";
    return s;
}

} // namespace

auto render_svg(const std::vector<EpochRecord>& epochs, const std::string& title) -> std::string
{
    double loss_hi = 0;
    for (const auto& e : epochs) {
        loss_hi = std::max(loss_hi, e.train_loss);
    }
    const Panel loss{50, 170, 0, loss_hi > 0 ? loss_hi : 1.0};
    const Panel acc{270, 170, 0, 1};
    std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
                    "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
                    "viewBox=\"0 0 640 480\">\n";
    s += "  <rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"#ffffff\"/>\n";
    s += "  <text x=\"320\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">" + xml_escape(title)
         + "</text>\n";
    s += frame(loss, "training loss");
    s += polyline(epochs, loss, &EpochRecord::train_loss, "#d62728");
    s += frame(acc, "training accuracy (blue), validation metric (green)");
    s += polyline(epochs, acc, &EpochRecord::train_acc, "#1f77b4");
    s += polyline(epochs, acc, &EpochRecord::val_metric, "#2ca02c");
    s += "  <text x=\"340\" y=\"470\" font-size=\"11\" text-anchor=\"middle\">epoch (0 to "
         + std::to_string(epochs.empty() ? 0 : epochs.size() - 1) + ")</text>\n";
    s += "</svg>\n";
    return s;
}

void write_text_file(const std::string& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << content) || !out.flush()) {
        throw Error("cannot write '" + path + "'");
    }
}

auto read_text_file(const std::string& path) -> std::string
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open '" + path + "'", 0);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace dfa
