#pragma once

#include "gpvio/lie.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

namespace gpvio {

struct StampedPose {
  double stamp = 0.0;
  Pose3 pose;
};

/// TUM trajectory: `stamp tx ty tz qx qy qz qw`, '#' starts a comment line.
void write_tum(const std::filesystem::path& path, std::span<const StampedPose> poses);
std::vector<StampedPose> read_tum(const std::filesystem::path& path);

namespace io {

/// Enough digits for doubles to round-trip exactly.
void set_full_precision(std::ostream& os);

/// Parses a comma-separated file whose first line must equal `header`.
/// Every data row must have exactly `fields` numeric columns.
void for_each_csv_row(const std::filesystem::path& path, std::string_view header,
                      std::size_t fields,
                      const std::function<void(std::span<const double>)>& row);

}  // namespace io
}  // namespace gpvio
