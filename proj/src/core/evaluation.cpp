// SPDX-License-Identifier: Apache-2.0
#include "core/evaluation.hpp"

#include "core/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace testam {

using ad::Index;
using ad::Matrix;

namespace {

struct Accum {
  double abs = 0.0, sq = 0.0, pct = 0.0;
  std::size_t count = 0;

  void add(double y, double y_hat) {
    if (y == 0.0)
      return;
    const double e = y - y_hat;
    abs += std::abs(e);
    sq += e * e;
    pct += std::abs(e / y);
    ++count;
  }
  Metrics done() const {
    Metrics m;
    m.count = count;
    if (count == 0)
      return m;
    const double n = static_cast<double>(count);
    m.mae = abs / n;
    m.rmse = std::sqrt(sq / n);
    m.mape = 100.0 * pct / n;
    return m;
  }
};

std::ofstream open_out(const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    fail(ErrorKind::Io, "cannot write " + path.string());
  return out;
}

std::string fmt(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void metric_cells(std::ostream &out, const Metrics &m) {
  out << m.count << ',';
  if (!m.present()) {
    out << "NA,NA,NA";
    return;
  }
  out << fmt(m.mae, 6) << ',' << fmt(m.rmse, 6) << ',' << fmt(m.mape, 2);
}

Json metrics_json(const Metrics &m) {
  if (!m.present())
    return {{"count", 0}, {"mae", nullptr}, {"rmse", nullptr}, {"mape_pct", nullptr}};
  return {{"count", m.count}, {"mae", m.mae}, {"rmse", m.rmse}, {"mape_pct", m.mape}};
}

ShareRow finish(std::string group, const std::array<double, kNumExperts> &counts) {
  ShareRow row;
  row.group = std::move(group);
  double total = 0.0;
  for (double c : counts)
    total += c;
  row.count = static_cast<std::size_t>(total);
  for (int e = 0; e < kNumExperts; ++e)
    row.share[e] = total > 0.0 ? counts[e] / total : 0.0;
  return row;
}

Json share_json(const ShareRow &row, const std::array<std::string, kNumExperts> &names) {
  Json shares = Json::object();
  for (int e = 0; e < kNumExperts; ++e)
    shares[names[e]] = row.share[e];
  return {{"group", row.group}, {"count", row.count}, {"share", shares}};
}

const char *kColors[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a"};

} // namespace

Metrics metrics(const Matrix &y, const Matrix &y_hat) {
  require(y.rows() == y_hat.rows() && y.cols() == y_hat.cols(), "metrics: shape mismatch");
  Accum a;
  for (Index i = 0; i < y.size(); ++i)
    a.add(y.data()[i], y_hat.data()[i]);
  return a.done();
}

std::vector<int> horizon_steps(int interval_minutes, const std::vector<int> &minutes,
                               int out_steps) {
  require(interval_minutes >= 1, "interval must be positive");
  std::vector<int> steps;
  for (int m : minutes) {
    if (m <= 0 || m % interval_minutes != 0)
      continue;
    const int s = m / interval_minutes;
    if (s <= out_steps)
      steps.push_back(s);
  }
  return steps;
}

std::vector<int> default_horizon_minutes(int interval_minutes) {
  if (interval_minutes == 10)
    return {10, 30, 60};
  return {15, 30, 60};
}

HorizonReport horizon_report(const Matrix &y, const Matrix &y_hat, const Layout &l,
                             int interval_minutes,
                             const std::vector<int> &horizon_minutes) {
  require(y.rows() == l.rows() && y_hat.rows() == l.rows(),
          "horizon_report: layout mismatch");
  std::vector<Accum> acc(static_cast<std::size_t>(l.steps));
  Accum all;
  for (int b = 0; b < l.batch; ++b)
    for (int t = 0; t < l.steps; ++t)
      for (int n = 0; n < l.nodes; ++n) {
        const int r = l.row(b, t, n);
        acc[t].add(y(r, 0), y_hat(r, 0));
        all.add(y(r, 0), y_hat(r, 0));
      }
  HorizonReport rep;
  for (const Accum &a : acc)
    rep.per_step.push_back(a.done());
  rep.average = all.done();
  for (int m : horizon_minutes) {
    const auto steps = horizon_steps(interval_minutes, {m}, l.steps);
    if (steps.empty())
      continue;
    rep.rows.push_back({std::to_string(m) + "min", m, steps[0],
                        rep.per_step[steps[0] - 1]});
  }
  rep.rows.push_back({"average", 0, 0, rep.average});
  return rep;
}

HorizonReport horizon_report(const Predictions &pred, int interval_minutes,
                             const std::vector<int> &horizon_minutes) {
  return horizon_report(pred.y, pred.y_hat, pred.layout, interval_minutes,
                        horizon_minutes);
}

RoutingReport routing_report(const Predictions &pred,
                             const std::vector<WindowedSample> &samples,
                             const TestamModel &model, int steps_per_day,
                             const std::optional<ScenarioTags> &tags) {
  const Layout &l = pred.layout;
  require(static_cast<int>(samples.size()) == l.batch,
          "routing_report: sample count mismatch");
  RoutingReport rep;
  rep.gating = pred.gating;
  for (int e = 0; e < kNumExperts; ++e)
    rep.experts[e] = to_string(model.experts()[e].kind);

  using Counts = std::array<double, kNumExperts>;
  Counts overall{};
  std::vector<Counts> node(l.nodes), hour(24);
  Counts cls[2]{}, event[2]{};
  for (int b = 0; b < l.batch; ++b) {
    const WindowedSample &s = samples[b];
    for (int t = 0; t < l.steps; ++t) {
      const int h = std::min(23, s.tau_out[t] * 24 / steps_per_day);
      const std::size_t series_t = s.start + s.in_steps + t;
      for (int n = 0; n < l.nodes; ++n) {
        const int e = pred.selected[l.row(b, t, n)];
        overall[e] += 1.0;
        node[n][e] += 1.0;
        hour[h][e] += 1.0;
        if (tags) {
          cls[static_cast<int>(tags->node_class[n])][e] += 1.0;
          event[tags->in_event(series_t, n) ? 1 : 0][e] += 1.0;
        }
      }
    }
  }
  rep.overall = finish("all", overall);
  for (int n = 0; n < l.nodes; ++n)
    rep.per_node.push_back(finish(std::to_string(n), node[n]));
  for (int h = 0; h < 24; ++h)
    rep.per_hour.push_back(finish(std::to_string(h), hour[h]));
  if (tags) {
    rep.per_class.push_back(finish("connected", cls[0]));
    rep.per_class.push_back(finish("isolated", cls[1]));
    rep.per_event.push_back(finish("non_event", event[0]));
    rep.per_event.push_back(finish("event", event[1]));
  }
  return rep;
}

void write_horizon_csv(const HorizonReport &report, const std::filesystem::path &path) {
  std::ofstream out = open_out(path);
  out << "horizon,minutes,step,count,mae,rmse,mape_pct\n";
  for (const HorizonRow &r : report.rows) {
    out << r.label << ',' << r.minutes << ',' << r.step << ',';
    metric_cells(out, r.m);
    out << '\n';
  }
}

void write_step_csv(const HorizonReport &report, const std::filesystem::path &path) {
  std::ofstream out = open_out(path);
  out << "step,count,mae,rmse,mape_pct\n";
  for (std::size_t s = 0; s < report.per_step.size(); ++s) {
    out << s + 1 << ',';
    metric_cells(out, report.per_step[s]);
    out << '\n';
  }
}

Json to_json(const HorizonReport &report) {
  Json rows = Json::array();
  for (const HorizonRow &r : report.rows) {
    Json j = metrics_json(r.m);
    j["horizon"] = r.label;
    j["minutes"] = r.minutes;
    j["step"] = r.step;
    rows.push_back(j);
  }
  Json steps = Json::array();
  for (const Metrics &m : report.per_step)
    steps.push_back(metrics_json(m));
  return {{"horizons", rows}, {"per_step", steps}, {"average", metrics_json(report.average)}};
}

Json to_json(const RoutingReport &r) {
  Json doc;
  doc["gating"] = r.gating;
  if (!r.gating)
    doc["note"] = "gating disabled: every point uses the attention expert";
  doc["experts"] = r.experts;
  doc["overall"] = share_json(r.overall, r.experts);
  auto rows = [&](const std::vector<ShareRow> &v) {
    Json a = Json::array();
    for (const ShareRow &row : v)
      a.push_back(share_json(row, r.experts));
    return a;
  };
  doc["per_node"] = rows(r.per_node);
  doc["per_hour"] = rows(r.per_hour);
  if (!r.per_class.empty()) {
    doc["per_class"] = rows(r.per_class);
    doc["per_event"] = rows(r.per_event);
  }
  return doc;
}

void write_speed_plot(const Predictions &pred, const std::vector<WindowedSample> &samples,
                      int node, const std::array<std::string, kNumExperts> &names,
                      const std::filesystem::path &path) {
  const Layout &l = pred.layout;
  require(node >= 0 && node < l.nodes, "plot: node out of range");
  const int count = l.batch;
  std::vector<double> truth, composite;
  std::vector<std::vector<double>> experts(kNumExperts);
  std::vector<int> chosen;
  for (int b = 0; b < count; ++b) {
    const int r = l.row(b, 0, node);
    truth.push_back(pred.y(r, 0));
    composite.push_back(pred.y_hat(r, 0));
    chosen.push_back(pred.selected[r]);
    for (int e = 0; e < kNumExperts; ++e)
      if (pred.y_hat_expert[e].size() != 0)
        experts[e].push_back(pred.y_hat_expert[e](r, 0));
  }
  double lo = 1e300, hi = -1e300;
  auto extend = [&](const std::vector<double> &v) {
    for (double x : v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  };
  extend(truth);
  extend(composite);
  for (const auto &e : experts)
    extend(e);
  if (hi <= lo)
    hi = lo + 1.0;
  const double width = 900, height = 360, left = 50, right = 160, top = 20,
               bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;
  auto px = [&](int i) { return left + pw * (count > 1 ? double(i) / (count - 1) : 0.5); };
  auto py = [&](double v) { return top + ph * (1.0 - (v - lo) / (hi - lo)); };
  auto polyline = [&](const std::vector<double> &v, const char *color, double w,
                      const char *dash) {
    std::ostringstream s;
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << w
      << "\"" << dash << " points=\"";
    for (std::size_t i = 0; i < v.size(); ++i)
      s << fmt(px(static_cast<int>(i)), 1) << ',' << fmt(py(v[i]), 1) << ' ';
    s << "\"/>\n";
    return s.str();
  };

  std::ofstream out = open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << left << "\" y=\"14\">node " << node
      << ": speed at the first forecast step (window " << samples.front().start
      << " onward)</text>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw
      << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left
      << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    out << "<text x=\"4\" y=\"" << fmt(py(v) + 4, 1) << "\">" << fmt(v, 1) << "</text>\n";
  }
  for (int i = 0; i < count; ++i) {
    const double x0 = px(i) - pw / std::max(count, 1) / 2.0;
    out << "<rect x=\"" << fmt(x0, 1) << "\" y=\"" << top + ph + 8 << "\" width=\""
        << fmt(pw / std::max(count, 1) + 0.5, 2) << "\" height=\"10\" fill=\""
        << kColors[chosen[i]] << "\"/>\n";
  }
  for (int e = 0; e < kNumExperts; ++e)
    if (!experts[e].empty())
      out << polyline(experts[e], kColors[e], 1.0, " stroke-dasharray=\"4 3\"");
  out << polyline(truth, "black", 1.5, "");
  out << polyline(composite, kColors[3], 1.5, "");
  double ly = top + 10;
  auto legend = [&](const std::string &label, const char *color) {
    out << "<rect x=\"" << left + pw + 15 << "\" y=\"" << ly - 8 << "\" width=\"12\" "
        << "height=\"3\" fill=\"" << color << "\"/><text x=\"" << left + pw + 32
        << "\" y=\"" << ly << "\">" << label << "</text>\n";
    ly += 16;
  };
  legend("observed", "black");
  legend("composite", kColors[3]);
  for (int e = 0; e < kNumExperts; ++e)
    legend("expert " + std::to_string(e) + " (" + names[e] + ")", kColors[e]);
  out << "<text x=\"" << left << "\" y=\"" << height - 8
      << "\">strip: selected expert per window</text>\n";
  out << "</svg>\n";
}

void write_share_plot(const std::vector<ShareRow> &rows,
                      const std::array<std::string, kNumExperts> &names,
                      const std::string &title, const std::filesystem::path &path) {
  const double bar = 18, gap = 6, left = 110, top = 30, pw = 520;
  const double height = top + rows.size() * (bar + gap) + 50;
  std::ofstream out = open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + pw + 20
      << "\" height=\"" << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"10\" y=\"18\">" << title << "</text>\n";
  double y = top;
  for (const ShareRow &r : rows) {
    out << "<text x=\"10\" y=\"" << y + bar - 5 << "\">" << r.group << "</text>\n";
    double x = left;
    for (int e = 0; e < kNumExperts; ++e) {
      const double w = pw * r.share[e];
      out << "<rect x=\"" << fmt(x, 1) << "\" y=\"" << y << "\" width=\"" << fmt(w, 1)
          << "\" height=\"" << bar << "\" fill=\"" << kColors[e] << "\"/>\n";
      x += w;
    }
    y += bar + gap;
  }
  double lx = left;
  for (int e = 0; e < kNumExperts; ++e) {
    out << "<rect x=\"" << lx << "\" y=\"" << y + 10 << "\" width=\"10\" height=\"10\" "
        << "fill=\"" << kColors[e] << "\"/><text x=\"" << lx + 14 << "\" y=\"" << y + 19
        << "\">" << e << ": " << names[e] << "</text>\n";
    lx += 150;
  }
  out << "</svg>\n";
}

} // namespace testam
