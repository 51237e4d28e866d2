#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "tripaudit/common.hpp"
#include "tripaudit/effects.hpp"

namespace tripaudit {

// Plot-ready view of one effect curve. A is the threshold on a [0,1] axis:
// the demographic fraction attributes (pct_*) are already on that scale and
// pass through unchanged; every other attribute (the per-m2 densities) is
// min-max scaled over the curve's threshold span, with the raw t kept
// alongside.
struct ChartSeries {
    std::string attribute;
    std::string outcome;
    Endpoint endpoint = Endpoint::pickup;
    EstimateVariant variant = EstimateVariant::point;
    std::vector<double> a;
    std::vector<double> t;
    std::vector<double> d;
    std::vector<double> mean_below;  // raw-difference series, optional
    std::vector<double> mean_above;
    bool include_raw = false;
    bool axis_scaled = false;
    double t_min = 0.0, t_max = 0.0;
};

inline ChartSeries make_series(const EffectCurve& curve, bool include_raw) {
    if (curve.points.empty()) throw DegeneracyError("chart: curve has no points");
    ChartSeries s;
    s.attribute = curve.attribute;
    s.outcome = curve.outcome;
    s.endpoint = curve.endpoint;
    s.variant = curve.variant;
    s.include_raw = include_raw;
    s.t_min = curve.points.front().t;
    s.t_max = curve.points.back().t;
    bool is_fraction = curve.attribute.rfind("pct_", 0) == 0 && s.t_min >= 0.0 && s.t_max <= 1.0;
    s.axis_scaled = !is_fraction;
    double span = s.t_max - s.t_min;
    for (const auto& p : curve.points) {
        s.t.push_back(p.t);
        s.d.push_back(p.d);
        if (s.axis_scaled) {
            s.a.push_back(span > 0.0 ? (p.t - s.t_min) / span : 0.0);
        } else {
            s.a.push_back(p.t);
        }
        if (include_raw) {
            s.mean_below.push_back(p.mean_below);
            s.mean_above.push_back(p.mean_above);
        }
    }
    return s;
}

inline void write_series_csv(std::ostream& out, const ChartSeries& s) {
    out << "# attribute=" << s.attribute << " outcome=" << s.outcome
        << " endpoint=" << to_string(s.endpoint) << " variant=" << to_string(s.variant);
    if (s.axis_scaled) {
        out << " axis_scaled=1 t_min=" << format_double(s.t_min)
            << " t_max=" << format_double(s.t_max);
    }
    out << "\n";
    out << "A,t,d";
    if (s.include_raw) out << ",mean_below,mean_above";
    out << "\n";
    for (std::size_t i = 0; i < s.a.size(); ++i) {
        out << format_double(s.a[i]) << "," << format_double(s.t[i]) << ","
            << format_double(s.d[i]);
        if (s.include_raw) {
            out << "," << format_double(s.mean_below[i]) << ","
                << format_double(s.mean_above[i]);
        }
        out << "\n";
    }
}

namespace detail {

struct SvgMapper {
    double x0, x1, y0, y1;          // data ranges
    double px0, px1, py0, py1;      // pixel ranges (y inverted)
    double x(double v) const { return px0 + (v - x0) / (x1 - x0) * (px1 - px0); }
    double y(double v) const { return py0 + (y1 - v) / (y1 - y0) * (py1 - py0); }
};

inline std::string polyline(const std::vector<double>& xs, const std::vector<double>& ys,
                            const SvgMapper& m, const std::string& color) {
    std::string pts;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        pts += format_fixed(m.x(xs[i]), 2) + "," + format_fixed(m.y(ys[i]), 2) + " ";
    }
    return "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"" +
           pts + "\"/>\n";
}

}  // namespace detail

// Minimal static line chart: effect size d against the A axis, with a zero
// line; with include_raw, the two raw group-mean series instead.
inline void write_series_svg(std::ostream& out, const ChartSeries& s) {
    constexpr double width = 640, height = 420;
    constexpr double ml = 60, mr = 15, mt = 30, mb = 45;

    std::vector<const std::vector<double>*> ys = {&s.d};
    if (s.include_raw && !s.mean_below.empty()) {
        ys = {&s.mean_below, &s.mean_above};
    }
    double ymin = 0.0, ymax = 0.0;
    bool first = true;
    for (const auto* v : ys) {
        for (double y : *v) {
            ymin = first ? y : std::min(ymin, y);
            ymax = first ? y : std::max(ymax, y);
            first = false;
        }
    }
    if (!s.include_raw) {
        ymin = std::min(ymin, 0.0);
        ymax = std::max(ymax, 0.0);
    }
    if (ymax == ymin) {
        ymax += 0.5;
        ymin -= 0.5;
    }
    double pad = 0.05 * (ymax - ymin);
    detail::SvgMapper m{s.a.front(), s.a.back(), ymin - pad, ymax + pad,
                        ml,          width - mr, mt,         height - mb};
    if (m.x1 == m.x0) m.x1 = m.x0 + 1.0;

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::string title = s.attribute + " vs " + s.outcome + " (" + to_string(s.endpoint) + ", " +
                        to_string(s.variant) + ")";
    out << "<text x=\"" << width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
        << title << "</text>\n";

    // axes
    out << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
        << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
        << height - mb << "\" stroke=\"black\"/>\n";
    if (ymin - pad < 0.0 && ymax + pad > 0.0) {
        out << "<line x1=\"" << ml << "\" y1=\"" << format_fixed(m.y(0.0), 2) << "\" x2=\""
            << width - mr << "\" y2=\"" << format_fixed(m.y(0.0), 2)
            << "\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 3\"/>\n";
    }
    for (int i = 0; i <= 4; ++i) {
        double fx = s.a.front() + (s.a.back() - s.a.front()) * i / 4.0;
        double fy = (ymin - pad) + ((ymax + pad) - (ymin - pad)) * i / 4.0;
        out << "<text x=\"" << format_fixed(m.x(fx), 2) << "\" y=\"" << height - mb + 16
            << "\" text-anchor=\"middle\" font-size=\"10\">" << format_fixed(fx, 2)
            << "</text>\n";
        out << "<text x=\"" << ml - 6 << "\" y=\"" << format_fixed(m.y(fy) + 3, 2)
            << "\" text-anchor=\"end\" font-size=\"10\">" << format_fixed(fy, 2) << "</text>\n";
    }
    out << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 8
        << "\" text-anchor=\"middle\" font-size=\"12\">A = " << s.attribute << "</text>\n";
    out << "<text x=\"14\" y=\"" << (mt + height - mb) / 2
        << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 "
        << (mt + height - mb) / 2 << ")\">"
        << (s.include_raw ? s.outcome : std::string("d")) << "</text>\n";

    if (s.include_raw && !s.mean_below.empty()) {
        out << detail::polyline(s.a, s.mean_below, m, "#1f77b4");
        out << detail::polyline(s.a, s.mean_above, m, "#ff7f0e");
        out << "<text x=\"" << width - mr - 5 << "\" y=\"" << mt + 14
            << "\" text-anchor=\"end\" font-size=\"10\" fill=\"#1f77b4\">below t</text>\n";
        out << "<text x=\"" << width - mr - 5 << "\" y=\"" << mt + 28
            << "\" text-anchor=\"end\" font-size=\"10\" fill=\"#ff7f0e\">above t</text>\n";
    } else {
        out << detail::polyline(s.a, s.d, m, "#1f77b4");
    }
    out << "</svg>\n";
}

}  // namespace tripaudit
