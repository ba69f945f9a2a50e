#include "volbench/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "volbench/error.hpp"
#include "volbench/format.hpp"

namespace volbench {

namespace {

bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int days_in_month(int y, int m) {
  static constexpr int kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  return m == 2 && is_leap(y) ? 29 : kDays[m - 1];
}

bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

}  // namespace

Date Date::parse(std::string_view text) {
  Date d;
  if (text.size() != 10 || text[4] != '-' || text[7] != '-' || !parse_int(text.substr(0, 4), d.year) ||
      !parse_int(text.substr(5, 2), d.month) || !parse_int(text.substr(8, 2), d.day) || d.month < 1 ||
      d.month > 12 || d.day < 1 || d.day > days_in_month(d.year, d.month)) {
    throw DataError("unparsable date '" + std::string(text) + "'");
  }
  return d;
}

std::string Date::to_string() const {
  std::ostringstream os;
  os << std::setfill('0') << std::setw(4) << year << '-' << std::setw(2) << month << '-' << std::setw(2) << day;
  return os.str();
}

// Howard Hinnant's days_from_civil.
long Date::days_since_epoch() const {
  const long y = month <= 2 ? year - 1 : year;
  const long era = (y >= 0 ? y : y - 399) / 400;
  const long yoe = y - era * 400;
  const long mp = (month + 9) % 12;
  const long doy = (153 * mp + 2) / 5 + day - 1;
  const long doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + doe - 719468;
}

Date Date::from_days(long z) {
  z += 719468;
  const long era = (z >= 0 ? z : z - 146096) / 146097;
  const long doe = z - era * 146097;
  const long yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const long doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const long mp = (5 * doy + 2) / 153;
  Date d;
  d.day = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  d.month = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
  d.year = static_cast<int>(yoe + era * 400 + (d.month <= 2 ? 1 : 0));
  return d;
}

std::vector<double> ReturnSeries::denormalized() const {
  std::vector<double> out(returns.size());
  for (std::size_t i = 0; i < returns.size(); ++i) out[i] = returns[i] * std + mean;
  return out;
}

std::vector<PriceSeries> load_price_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open price file " + path.string());
  return parse_price_csv(in, path.string());
}

std::vector<PriceSeries> parse_price_csv(std::istream& in, std::string_view source) {
  const std::string where(source);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "series_id,date,close") {
    throw DataError(where + ": expected header 'series_id,date,close'");
  }

  struct Row {
    Date date;
    double close;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<Row>> rows;
  std::set<std::pair<std::string, Date>> seen;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    auto text = trim(line);
    if (text.empty()) continue;
    auto fields = split_commas(text);
    const std::string row_ref = where + " row " + std::to_string(line_no);
    if (fields.size() != 3 || trim(fields[0]).empty()) throw DataError(row_ref + ": malformed row '" + line + "'");
    std::string id(trim(fields[0]));
    Date date;
    try {
      date = Date::parse(trim(fields[1]));
    } catch (const DataError& e) {
      throw DataError(row_ref + ": " + e.what());
    }
    double close = std::numeric_limits<double>::quiet_NaN();
    auto close_text = trim(fields[2]);
    if (!close_text.empty()) {
      auto [ptr, ec] = std::from_chars(close_text.data(), close_text.data() + close_text.size(), close);
      if (ec != std::errc() || ptr != close_text.data() + close_text.size()) {
        throw DataError(row_ref + ": unparsable close '" + std::string(close_text) + "'");
      }
    }
    if (!seen.emplace(id, date).second) {
      throw DataError(row_ref + ": duplicate row for " + id + " on " + date.to_string());
    }
    auto [it, inserted] = rows.try_emplace(id);
    if (inserted) order.push_back(id);
    it->second.push_back({date, close});
  }

  std::vector<PriceSeries> out;
  out.reserve(order.size());
  for (const auto& id : order) {
    auto& r = rows[id];
    std::stable_sort(r.begin(), r.end(), [](const Row& a, const Row& b) { return a.date < b.date; });
    PriceSeries p;
    p.series_id = id;
    for (const auto& row : r) {
      p.dates.push_back(row.date);
      p.prices.push_back(row.close);
    }
    out.push_back(std::move(p));
  }
  return out;
}

void write_price_csv(std::ostream& out, std::span<const PriceSeries> series) {
  out << "series_id,date,close\n";
  for (const auto& p : series) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      out << p.series_id << ',' << p.dates[i].to_string() << ',';
      if (!std::isnan(p.prices[i])) out << format_double(p.prices[i]);
      out << '\n';
    }
  }
}

FilterResult filter_series(std::vector<PriceSeries> raw, std::size_t min_len) {
  if (min_len < 2) throw std::invalid_argument("min_len must be at least 2");
  std::set<Date> calendar;
  for (const auto& p : raw) calendar.insert(p.dates.begin(), p.dates.end());

  FilterResult result;
  for (auto& p : raw) {
    std::string reason;
    bool missing = std::any_of(p.prices.begin(), p.prices.end(), [](double v) { return std::isnan(v); });
    if (!missing && !p.dates.empty()) {
      auto lo = calendar.lower_bound(p.dates.front());
      auto hi = calendar.upper_bound(p.dates.back());
      missing = static_cast<std::size_t>(std::distance(lo, hi)) != p.dates.size();
    }
    if (missing) {
      reason = "missing value";
    } else if (std::any_of(p.prices.begin(), p.prices.end(), [](double v) { return !(v > 0) || !std::isfinite(v); })) {
      reason = "non-positive price";
    } else if (p.size() < min_len) {
      reason = "insufficient observations";
    }
    if (reason.empty()) {
      result.manifest.kept.push_back(p.series_id);
      result.kept.push_back(std::move(p));
    } else {
      result.manifest.dropped.push_back({p.series_id, reason});
    }
  }
  return result;
}

std::vector<double> log_returns(const PriceSeries& p) {
  if (p.size() < 2) throw DataError("series " + p.series_id + " needs at least two prices");
  std::vector<double> out(p.size() - 1);
  for (std::size_t t = 0; t + 1 < p.size(); ++t) {
    const double a = p.prices[t], b = p.prices[t + 1];
    if (!(a > 0) || !(b > 0) || !std::isfinite(a) || !std::isfinite(b)) {
      throw DataError("series " + p.series_id + " has a non-positive or missing price at index " +
                      std::to_string(a > 0 ? t + 1 : t));
    }
    out[t] = std::log(b / a);
  }
  return out;
}

std::size_t train_length(std::size_t n, double split_fraction) {
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw ConfigError("split_fraction must lie in (0,1), got " + format_double(split_fraction));
  }
  // The tolerance keeps fractions such as 1800/2013 from losing a step to
  // rounding in the product.
  return static_cast<std::size_t>(std::floor(split_fraction * static_cast<double>(n) + 1e-9));
}

ReturnSeries normalize_and_split(std::string series_id, std::span<const double> raw_returns, double split_fraction) {
  const std::size_t n = raw_returns.size();
  const std::size_t train_len = train_length(n, split_fraction);
  if (train_len < 2) throw DataError("series " + series_id + " has too few returns to split");

  double mean = 0.0;
  for (std::size_t i = 0; i < train_len; ++i) mean += raw_returns[i];
  mean /= static_cast<double>(train_len);
  double var = 0.0;
  for (std::size_t i = 0; i < train_len; ++i) var += (raw_returns[i] - mean) * (raw_returns[i] - mean);
  var /= static_cast<double>(train_len);
  const double sd = std::sqrt(var);
  if (!(sd > 0.0) || !std::isfinite(sd)) throw DataError("degenerate series " + series_id + ": zero training variance");

  ReturnSeries out;
  out.series_id = std::move(series_id);
  out.mean = mean;
  out.std = sd;
  out.train_len = train_len;
  out.test_len = n - train_len;
  out.returns.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.returns[i] = (raw_returns[i] - mean) / sd;
  return out;
}

void write_dataset_csv(std::ostream& out, const ReturnSeries& series) {
  out << "t,x_normalized,split\n";
  for (std::size_t t = 0; t < series.returns.size(); ++t) {
    out << t << ',' << format_double(series.returns[t]) << ',' << (t < series.train_len ? "train" : "test") << '\n';
  }
}

ReturnSeries read_dataset_csv(std::istream& in, std::string series_id) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != "t,x_normalized,split") {
    throw DataError("dataset " + series_id + ": expected header 't,x_normalized,split'");
  }
  ReturnSeries out;
  out.series_id = std::move(series_id);
  std::size_t line_no = 1;
  bool in_test = false;
  while (std::getline(in, line)) {
    ++line_no;
    auto text = trim(line);
    if (text.empty()) continue;
    auto f = split_commas(text);
    double x = 0.0;
    auto xs = f.size() == 3 ? trim(f[1]) : std::string_view{};
    auto [ptr, ec] = std::from_chars(xs.data(), xs.data() + xs.size(), x);
    if (f.size() != 3 || xs.empty() || ec != std::errc() || ptr != xs.data() + xs.size()) {
      throw DataError("dataset " + out.series_id + " row " + std::to_string(line_no) + ": malformed row");
    }
    auto split = trim(f[2]);
    if (split == "train") {
      if (in_test) throw DataError("dataset " + out.series_id + ": train row after test rows");
      ++out.train_len;
    } else if (split == "test") {
      in_test = true;
      ++out.test_len;
    } else {
      throw DataError("dataset " + out.series_id + " row " + std::to_string(line_no) + ": bad split label");
    }
    out.returns.push_back(x);
  }
  return out;
}

void write_manifest_csv(std::ostream& out, const DatasetManifest& manifest, std::span<const ReturnSeries> kept) {
  out << "series_id,status,reason,mean,std,train_len,test_len\n";
  for (const auto& id : manifest.kept) {
    auto it = std::find_if(kept.begin(), kept.end(), [&](const ReturnSeries& r) { return r.series_id == id; });
    out << id << ",kept,,";
    if (it != kept.end()) {
      out << format_double(it->mean) << ',' << format_double(it->std) << ',' << it->train_len << ',' << it->test_len;
    } else {
      out << ",,,";
    }
    out << '\n';
  }
  for (const auto& d : manifest.dropped) out << d.series_id << ",dropped," << d.reason << ",,,,\n";
}

}  // namespace volbench
