#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace volbench {

struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  // Parses YYYY-MM-DD; throws DataError on anything else, including
  // calendar-invalid days.
  static Date parse(std::string_view text);
  std::string to_string() const;
  // Proleptic Gregorian day number, used for weekday arithmetic.
  long days_since_epoch() const;
  static Date from_days(long days);

  auto operator<=>(const Date&) const = default;
};

/// Daily closing prices of one instrument. A missing close is stored as NaN.
struct PriceSeries {
  std::string series_id;
  std::vector<Date> dates;
  std::vector<double> prices;

  std::size_t size() const { return prices.size(); }
};

/// Normalised log-returns with the statistics used to normalise them.
/// Statistics come from the first `train_len` returns only.
struct ReturnSeries {
  std::string series_id;
  std::vector<double> returns;
  double mean = 0.0;
  double std = 1.0;
  std::size_t train_len = 0;
  std::size_t test_len = 0;

  std::span<const double> train() const { return std::span(returns).first(train_len); }
  std::span<const double> test() const { return std::span(returns).subspan(train_len); }
  std::vector<double> denormalized() const;
};

struct DroppedSeries {
  std::string series_id;
  std::string reason;
};

struct DatasetManifest {
  std::vector<std::string> kept;
  std::vector<DroppedSeries> dropped;
  double split_fraction = 0.8;
};

inline constexpr std::size_t kDefaultMinLength = 100;
inline constexpr double kDefaultSplitFraction = 0.8;

// Long-format CSV with header `series_id,date,close`. An empty close cell
// is a missing value; duplicate (series_id, date) pairs are rejected.
std::vector<PriceSeries> load_price_csv(const std::filesystem::path& path);
std::vector<PriceSeries> parse_price_csv(std::istream& in, std::string_view source = "<stream>");
void write_price_csv(std::ostream& out, std::span<const PriceSeries> series);

struct FilterResult {
  std::vector<PriceSeries> kept;
  DatasetManifest manifest;
};

/// Drops series with a missing or non-positive price, or fewer than
/// `min_len` observations. A date that appears elsewhere in the universe
/// and falls inside a series' own date range but has no row for that
/// series counts as a missing value.
FilterResult filter_series(std::vector<PriceSeries> raw, std::size_t min_len = kDefaultMinLength);

std::vector<double> log_returns(const PriceSeries& p);

/// Standardises with training-portion statistics (population variance).
/// train_len = floor(split_fraction * n).
ReturnSeries normalize_and_split(std::string series_id, std::span<const double> raw_returns,
                                 double split_fraction = kDefaultSplitFraction);
std::size_t train_length(std::size_t n, double split_fraction);

// Per-series dataset file: `t,x_normalized,split`.
void write_dataset_csv(std::ostream& out, const ReturnSeries& series);
// Restores the returns and split; normalisation statistics live in the manifest.
ReturnSeries read_dataset_csv(std::istream& in, std::string series_id);

// `series_id,status,reason,mean,std,train_len,test_len`
void write_manifest_csv(std::ostream& out, const DatasetManifest& manifest, std::span<const ReturnSeries> kept);

}  // namespace volbench
