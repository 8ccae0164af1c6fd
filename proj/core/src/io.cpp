#include "gpvio/io.hpp"

#include "gpvio/errors.hpp"

#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

namespace gpvio {

namespace {

double parse_double(std::string_view s, const std::filesystem::path& path, std::size_t line) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError(path.string() + ":" + std::to_string(line) + ": bad number '" +
                      std::string(s) + "'");
  return v;
}

}  // namespace

namespace io {

void set_full_precision(std::ostream& os) {
  os.precision(std::numeric_limits<double>::max_digits10);
}

void for_each_csv_row(const std::filesystem::path& path, std::string_view header,
                      std::size_t fields,
                      const std::function<void(std::span<const double>)>& row) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw ConfigError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header)
    throw ConfigError(path.string() + ": expected header '" + std::string(header) + "'");

  std::vector<double> values;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    values.clear();
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      values.push_back(parse_double(rest.substr(0, comma), path, lineno));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (values.size() != fields)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(fields) + " fields");
    row(values);
  }
}

}  // namespace io

void write_tum(const std::filesystem::path& path, std::span<const StampedPose> poses) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  io::set_full_precision(os);
  for (const StampedPose& sp : poses) {
    const Eigen::Quaterniond q = sp.pose.rotation().quaternion();
    const Vector3& t = sp.pose.translation();
    os << sp.stamp << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.x() << ' '
       << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
  }
}

std::vector<StampedPose> read_tum(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path.string());
  std::vector<StampedPose> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    double v[8];
    for (double& x : v) {
      if (!(ls >> x))
        throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 8 fields");
    }
    const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    out.push_back({v[0], Pose3(Rot3::from_quaternion(q), Vector3(v[1], v[2], v[3]))});
  }
  return out;
}

}  // namespace gpvio
