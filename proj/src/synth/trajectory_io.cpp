#include "motionlab/synth/trajectory_io.hpp"

#include "motionlab/error.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

namespace motionlab::synth {
namespace {

using json = nlohmann::ordered_json;

json vec_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

// Reads a fixed-length numeric array, throwing std::runtime_error with a short reason.
template <int N>
Eigen::Matrix<double, N, 1> read_vec(const json& a, const char* what) {
  if (!a.is_array() || a.size() != N) {
    throw std::runtime_error(std::string(what) + " must hold " + std::to_string(N) + " numbers");
  }
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) {
    if (!a[i].is_number()) throw std::runtime_error(std::string(what) + " has a non-numeric entry");
    v[i] = a[i].get<double>();
  }
  return v;
}

const json& joint_list(const json& frame, const char* key) {
  const json& a = frame.at(key);
  if (!a.is_array() || a.size() != kJointCount) {
    throw std::runtime_error(std::string("'") + key + "' has " +
                             (a.is_array() ? std::to_string(a.size()) : std::string("no")) +
                             " joints, expected " + std::to_string(kJointCount));
  }
  return a;
}

json frame_json(const Frame& f) {
  json j;
  json coord = json::array();
  for (const Vec3& p : f.coord.joints) coord.push_back(vec_json(p));
  j["coord"] = std::move(coord);
  if (f.lie) {
    json lie = json::array();
    for (const Twist& t : f.lie->twists) {
      Eigen::Matrix<double, 6, 1> v;
      v << t.omega, t.nu;
      lie.push_back(vec_json(v));
    }
    j["lie"] = std::move(lie);
  }
  if (f.kp2d) {
    json kp = json::array();
    for (const Vec2& p : *f.kp2d) kp.push_back(vec_json(p));
    j["kp2d"] = std::move(kp);
  }
  if (f.root) j["root"] = vec_json(*f.root);
  return j;
}

Frame parse_frame(const json& j) {
  if (!j.is_object()) throw std::runtime_error("frame is not an object");
  Frame f;
  const json& coord = joint_list(j, "coord");
  for (std::size_t k = 0; k < kJointCount; ++k) f.coord.joints[k] = read_vec<3>(coord[k], "coord entry");
  if (j.contains("lie")) {
    const json& lie = joint_list(j, "lie");
    LiePose pose;
    for (std::size_t k = 0; k < kJointCount; ++k) {
      const auto v = read_vec<6>(lie[k], "lie entry");
      pose.twists[k] = Twist{v.head<3>(), v.tail<3>()};
    }
    f.lie = pose;
  }
  if (j.contains("kp2d")) {
    const json& kp = joint_list(j, "kp2d");
    Keypoints pts;
    for (std::size_t k = 0; k < kJointCount; ++k) pts[k] = read_vec<2>(kp[k], "kp2d entry");
    f.kp2d = pts;
  }
  if (j.contains("root")) f.root = read_vec<3>(j.at("root"), "root");
  return f;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  return out;
}

}  // namespace

void write_trajectory(const Trajectory& traj, std::ostream& out) {
  json header;
  header["schema"] = kTrajectorySchema;
  header["frame_rate"] = traj.frame_rate;
  header["label"] = traj.label;
  out << header.dump() << '\n';
  for (const Frame& f : traj.frames) out << frame_json(f).dump() << '\n';
}

void write_trajectory(const Trajectory& traj, const std::string& path) {
  auto out = open_out(path);
  write_trajectory(traj, out);
  if (!out) throw Error(ErrorCode::Io, "write to '" + path + "' failed");
}

Trajectory read_trajectory(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, "line 1: missing header");
  Trajectory traj;
  try {
    const json header = json::parse(line);
    const std::string schema = header.at("schema").get<std::string>();
    if (schema != kTrajectorySchema) {
      throw Error(ErrorCode::SchemaVersionMismatch,
                  "expected schema '" + std::string(kTrajectorySchema) + "', found '" + schema + "'");
    }
    traj.frame_rate = header.at("frame_rate").get<double>();
    if (!(traj.frame_rate > 0.0)) throw std::runtime_error("frame_rate must be positive");
    traj.label = header.value("label", std::string());
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("line 1: bad header: ") + e.what());
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::size_t frame = traj.frames.size();
    try {
      traj.frames.push_back(parse_frame(json::parse(line)));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + " (frame " +
                                             std::to_string(frame) + "): " + e.what());
    }
    const Frame& first = traj.frames.front();
    const Frame& last = traj.frames.back();
    if (first.lie.has_value() != last.lie.has_value() ||
        first.kp2d.has_value() != last.kp2d.has_value() ||
        first.root.has_value() != last.root.has_value()) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + " (frame " +
                                             std::to_string(frame) +
                                             "): optional fields differ from frame 0");
    }
  }
  return traj;
}

Trajectory read_trajectory(const std::string& path) {
  auto in = open_in(path);
  return read_trajectory(in);
}

void write_camera(const Camera& cam, const std::string& path) {
  json j;
  j["focal"] = vec_json(cam.focal);
  j["principal"] = vec_json(cam.principal);
  j["image_size"] = vec_json(cam.image_size);
  json rows = json::array();
  for (int r = 0; r < 3; ++r) rows.push_back(vec_json(cam.extrinsic.rotation.row(r).transpose()));
  j["extrinsic"]["rotation"] = std::move(rows);
  j["extrinsic"]["translation"] = vec_json(cam.extrinsic.translation);
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

Camera read_camera(const std::string& path) {
  auto in = open_in(path);
  try {
    const json j = json::parse(in);
    Camera cam;
    cam.focal = read_vec<2>(j.at("focal"), "focal");
    cam.principal = read_vec<2>(j.at("principal"), "principal");
    cam.image_size = read_vec<2>(j.at("image_size"), "image_size");
    const json& rows = j.at("extrinsic").at("rotation");
    if (!rows.is_array() || rows.size() != 3) throw std::runtime_error("rotation must have 3 rows");
    for (int r = 0; r < 3; ++r) cam.extrinsic.rotation.row(r) = read_vec<3>(rows[r], "rotation row").transpose();
    cam.extrinsic.translation = read_vec<3>(j.at("extrinsic").at("translation"), "translation");
    if (!(cam.focal.minCoeff() > 0.0)) throw std::runtime_error("focal lengths must be positive");
    return cam;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ParseError, "camera '" + path + "': " + e.what());
  }
}

}  // namespace motionlab::synth
