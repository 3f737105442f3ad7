// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/model/camera.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <string>

namespace sm::model {

Eigen::Matrix3d Camera::rotation() const {
    Eigen::Matrix3d r;
    r << extrinsic[0], extrinsic[1], extrinsic[2], extrinsic[3], extrinsic[4], extrinsic[5], extrinsic[6],
        extrinsic[7], extrinsic[8];
    return r;
}

Eigen::Vector3d Camera::translation() const {
    return {extrinsic[9], extrinsic[10], extrinsic[11]};
}

Eigen::Vector3d Camera::center() const {
    return -rotation().transpose() * translation();
}

void Camera::validate() const {
    for (double v : extrinsic) {
        if (!std::isfinite(v)) {
            throw CameraError("camera: non-finite extrinsic");
        }
    }
    const Eigen::Matrix3d r = rotation();
    const double err = (r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (err > 1e-4) {
        throw CameraError("camera: rotation is not orthonormal (max deviation " + std::to_string(err) + ")");
    }
    if (width <= 0 || height <= 0) {
        throw CameraError("camera: image size must be positive");
    }
    if (!(fx() > 0) || !(fy() > 0)) {
        throw CameraError("camera: focal lengths must be positive");
    }
    if (!(cx() >= 0 && cx() <= width && cy() >= 0 && cy() <= height)) {
        throw CameraError("camera: principal point outside the image");
    }
}

std::array<double, 16> Camera::conditioning_vector() const {
    std::array<double, 16> v{};
    for (int i = 0; i < 12; ++i) {
        v[i] = extrinsic[i];
    }
    v[12] = fx() / width;
    v[13] = fy() / height;
    v[14] = cx() / width;
    v[15] = cy() / height;
    return v;
}

Camera Camera::look_at(const Eigen::Vector3d& eye,
                       const Eigen::Vector3d& target,
                       const Eigen::Vector3d& world_up,
                       int width,
                       int height,
                       double focal_ratio) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    Eigen::Vector3d up = world_up.normalized();
    if (std::abs(forward.dot(up)) > 0.999) {
        up = std::abs(forward.z()) < 0.9 ? Eigen::Vector3d::UnitZ() : Eigen::Vector3d::UnitX();
    }
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right);
    Eigen::Matrix3d r;
    r.row(0) = right;
    r.row(1) = down;
    r.row(2) = forward;
    const Eigen::Vector3d t = -r * eye;

    Camera cam;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            cam.extrinsic[i * 3 + j] = r(i, j);
        }
        cam.extrinsic[9 + i] = t(i);
    }
    cam.width = width;
    cam.height = height;
    cam.intrinsic = {focal_ratio * width, focal_ratio * height, width / 2.0, height / 2.0};
    return cam;
}

Camera Camera::normalized_reference(int width, int height) {
    return look_at({0.0, 0.0, -2.0}, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitY(), width, height);
}

} // namespace sm::model
