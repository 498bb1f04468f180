#pragma once

#include "motionlab/synth/synthdata.hpp"

#include <iosfwd>
#include <string>

namespace motionlab::synth {

inline constexpr const char* kTrajectorySchema = "pmn-traj/1";

/// JSON Lines: a header line, then one object per frame. Doubles are written
/// with shortest round-trip formatting so a read back is exact.
void write_trajectory(const Trajectory& traj, std::ostream& out);
void write_trajectory(const Trajectory& traj, const std::string& path);

/// Throws ParseError (with line and frame number), SchemaVersionMismatch, or
/// Io when the file cannot be opened.
Trajectory read_trajectory(std::istream& in);
Trajectory read_trajectory(const std::string& path);

void write_camera(const Camera& cam, const std::string& path);
Camera read_camera(const std::string& path);

}  // namespace motionlab::synth
