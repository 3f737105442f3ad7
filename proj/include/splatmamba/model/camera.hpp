// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <array>
#include <stdexcept>

namespace sm::model {

class CameraError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Pinhole camera. Extrinsics map world to camera (x right, y down, z forward).
struct Camera {
    /// Rotation (row-major 3x3) followed by translation.
    std::array<double, 12> extrinsic{1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0};
    /// fx, fy, cx, cy in pixels.
    std::array<double, 4> intrinsic{1, 1, 0, 0};
    int width = 0;
    int height = 0;

    Eigen::Matrix3d rotation() const;
    Eigen::Vector3d translation() const;
    /// Camera centre in world coordinates.
    Eigen::Vector3d center() const;

    double fx() const { return intrinsic[0]; }
    double fy() const { return intrinsic[1]; }
    double cx() const { return intrinsic[2]; }
    double cy() const { return intrinsic[3]; }

    /// Throws CameraError unless the rotation is orthonormal (1e-4) and the intrinsics are sane.
    void validate() const;

    /// The 16 raw conditioning values: 12 extrinsic, then fx/W, fy/H, cx/W, cy/H.
    std::array<double, 16> conditioning_vector() const;

    static Camera look_at(const Eigen::Vector3d& eye,
                          const Eigen::Vector3d& target,
                          const Eigen::Vector3d& world_up,
                          int width,
                          int height,
                          double focal_ratio = 1.0);

    /// Reference pose assumed at inference: distance 2 on the -z axis, looking at the origin.
    static Camera normalized_reference(int width, int height);
};

} // namespace sm::model
