#include "handgcn/hand_graph.hpp"

#include "handgcn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace handgcn {

namespace {

constexpr double kDegenerateLength = 1e-12;

double norm(double x, double y, double z) { return std::sqrt(x * x + y * y + z * z); }

double distance(const Landmark& a, const Landmark& b) {
    return norm(a.x - b.x, a.y - b.y, a.z - b.z);
}

} // namespace

const HandTopology& HandTopology::standard() {
    static const HandTopology topo{
        {
            {0, 1}, {1, 2}, {2, 3}, {3, 4},          // thumb
            {0, 5}, {5, 6}, {6, 7}, {7, 8},          // index
            {5, 9}, {9, 10}, {10, 11}, {11, 12},     // middle
            {9, 13}, {13, 14}, {14, 15}, {15, 16},   // ring
            {13, 17}, {17, 18}, {18, 19}, {19, 20},  // pinky
            {0, 17},                                 // palm base
        },
        {
            {1, 2, 3, "thumb CMC"},
            {2, 3, 4, "thumb MCP"},
            {5, 6, 7, "index MCP"},
            {6, 7, 8, "index PIP"},
            {9, 10, 11, "middle MCP"},
            {10, 11, 12, "middle PIP"},
            {13, 14, 15, "ring MCP"},
            {14, 15, 16, "ring PIP"},
            {17, 18, 19, "pinky MCP"},
            {18, 19, 20, "pinky PIP"},
        },
    };
    return topo;
}

void HandTopology::validate() const {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (auto [a, b] : edges) {
        if (a >= kNumLandmarks || b >= kNumLandmarks) throw InvalidPose("topology: node index out of range");
        if (a == b) throw InvalidPose("topology: self-edge at node " + std::to_string(a));
        if (!seen.insert(std::minmax(a, b)).second)
            throw InvalidPose("topology: duplicate edge (" + std::to_string(a) + ", " +
                              std::to_string(b) + ")");
    }
    for (const auto& t : angle_triples) {
        if (t.first >= kNumLandmarks || t.joint >= kNumLandmarks || t.last >= kNumLandmarks)
            throw InvalidPose("topology: angle triple index out of range");
    }
}

void validate_pose(const HandPose& pose) {
    if (pose.label >= kNumClasses)
        throw InvalidPose("label " + std::to_string(pose.label) + " outside [0, 29)");
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        const auto& l = pose.landmarks[i];
        if (!std::isfinite(l.x) || !std::isfinite(l.y) || !std::isfinite(l.z))
            throw InvalidPose("landmark " + std::to_string(i) + " has a non-finite coordinate");
    }
}

double joint_angle(const Landmark& a, const Landmark& b, const Landmark& c) {
    const double ux = a.x - b.x, uy = a.y - b.y, uz = a.z - b.z;
    const double vx = c.x - b.x, vy = c.y - b.y, vz = c.z - b.z;
    const double nu = norm(ux, uy, uz);
    const double nv = norm(vx, vy, vz);
    if (nu < kDegenerateLength || nv < kDegenerateLength) throw DegenerateJoint({}, 0, 1, 2);
    const double cosine = std::clamp((ux * vx + uy * vy + uz * vz) / (nu * nv), -1.0, 1.0);
    return std::acos(cosine);
}

std::array<double, kNumLandmarks> compute_joint_angles(const HandPose& pose, const HandTopology& topo) {
    std::array<double, kNumLandmarks> angles{};
    for (const auto& t : topo.angle_triples) {
        try {
            angles[t.joint] =
                joint_angle(pose.landmarks[t.first], pose.landmarks[t.joint], pose.landmarks[t.last]);
        } catch (const DegenerateJoint&) {
            throw DegenerateJoint(std::string(t.name), t.first, t.joint, t.last, pose.source_id);
        }
    }
    return angles;
}

HandPose translational_normalize(HandPose pose) {
    const Landmark origin = pose.landmarks[kWristIndex];
    for (auto& l : pose.landmarks) {
        l.x -= origin.x;
        l.y -= origin.y;
        l.z -= origin.z;
    }
    return pose;
}

double max_pairwise_distance(const std::array<Landmark, kNumLandmarks>& landmarks) {
    double best = 0.0;
    for (std::size_t i = 0; i < kNumLandmarks; ++i)
        for (std::size_t j = i + 1; j < kNumLandmarks; ++j)
            best = std::max(best, distance(landmarks[i], landmarks[j]));
    return best;
}

HandPose scale_normalize(HandPose pose, double desired_distance) {
    if (!(desired_distance > 0.0)) throw InvalidPose("desired distance must be positive");
    const double d_max = max_pairwise_distance(pose.landmarks);
    if (d_max < kDegenerateLength) throw DegeneratePose(pose.source_id);
    const double s = desired_distance / d_max;
    for (auto& l : pose.landmarks) {
        l.x *= s;
        l.y *= s;
        l.z *= s;
    }
    return pose;
}

Matrix build_adjacency(const HandTopology& topo) {
    Matrix a(kNumLandmarks, kNumLandmarks);
    for (auto [i, j] : topo.edges) {
        a(i, j) = 1.0;
        a(j, i) = 1.0;
    }
    return a;
}

PoseGraph preprocess(const HandPose& pose, double desired_distance, const HandTopology& topo) {
    validate_pose(pose);
    const auto angles = compute_joint_angles(pose, topo);
    const HandPose scaled = scale_normalize(translational_normalize(pose), desired_distance);

    PoseGraph g;
    g.label = pose.label;
    g.source_id = pose.source_id;
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        const auto& l = scaled.landmarks[i];
        g.features(i, 0) = l.x;
        g.features(i, 1) = l.y;
        g.features(i, 2) = l.z;
        g.features(i, 3) = angles[i];
    }
    return g;
}

void validate_pose_graph(const PoseGraph& graph, double desired_distance, const HandTopology& topo) {
    const auto fail = [&](const std::string& what) {
        throw InvalidPose("graph '" + graph.source_id + "': " + what);
    };
    if (graph.features.rows() != kNumLandmarks || graph.features.cols() != kNumNodeFeatures)
        fail("feature matrix must be 21x4");
    if (graph.label >= kNumClasses) fail("label outside [0, 29)");
    if (!graph.features.all_finite()) fail("non-finite feature");

    for (std::size_t c = 0; c < 3; ++c)
        if (graph.features(kWristIndex, c) != 0.0) fail("wrist is not at the origin");

    std::array<bool, kNumLandmarks> is_joint{};
    for (const auto& t : topo.angle_triples) is_joint[t.joint] = true;
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        const double angle = graph.features(i, 3);
        if (!is_joint[i] && angle != 0.0) fail("angle on non-joint node " + std::to_string(i));
        if (angle < 0.0 || angle > std::numbers::pi) fail("angle outside [0, pi]");
    }

    std::array<Landmark, kNumLandmarks> pts;
    for (std::size_t i = 0; i < kNumLandmarks; ++i)
        pts[i] = {graph.features(i, 0), graph.features(i, 1), graph.features(i, 2)};
    if (std::abs(max_pairwise_distance(pts) - desired_distance) > 1e-9 * std::max(1.0, desired_distance))
        fail("max pairwise distance differs from the desired distance");
}

} // namespace handgcn
