#pragma once

#include "handgcn/numerics.hpp"

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace handgcn {

inline constexpr std::size_t kNumLandmarks = 21;
/// x, y, z, joint angle.
inline constexpr std::size_t kNumNodeFeatures = 4;
inline constexpr std::size_t kNumClasses = 29;
inline constexpr std::size_t kWristIndex = 0;

struct Landmark {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    friend bool operator==(const Landmark&, const Landmark&) = default;
};

/// One detected hand: landmark i is the detector's keypoint L_i (0 = wrist,
/// then four keypoints per finger from thumb to pinky, base to tip).
struct HandPose {
    std::array<Landmark, kNumLandmarks> landmarks{};
    std::size_t label = 0;
    std::string source_id;

    friend bool operator==(const HandPose&, const HandPose&) = default;
};

/// Three landmarks whose middle point is the joint that receives the angle feature.
struct AngleTriple {
    std::size_t first;
    std::size_t joint;
    std::size_t last;
    std::string_view name;
};

struct HandTopology {
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::vector<AngleTriple> angle_triples;

    /// The 21-edge hand skeleton and the ten finger-joint angle triples.
    static const HandTopology& standard();

    /// Throws InvalidPose on out-of-range indices, self-edges, or duplicate edges.
    void validate() const;
};

/// Preprocessed sample: 21×4 node features, columns (x, y, z, joint angle).
struct PoseGraph {
    Matrix features{kNumLandmarks, kNumNodeFeatures};
    std::size_t label = 0;
    std::string source_id;

    friend bool operator==(const PoseGraph&, const PoseGraph&) = default;
};

/// Throws InvalidPose for non-finite coordinates or a label outside [0, 29).
void validate_pose(const HandPose& pose);

/// Angle at `b` between b->a and b->c, in [0, pi].
/// Throws DegenerateJoint when either arm is shorter than 1e-12.
double joint_angle(const Landmark& a, const Landmark& b, const Landmark& c);

/// Per-node angle vector: the ten joint nodes of `topo` carry their angle, the rest are 0.
std::array<double, kNumLandmarks> compute_joint_angles(
    const HandPose& pose, const HandTopology& topo = HandTopology::standard());

/// Moves the wrist to the origin.
HandPose translational_normalize(HandPose pose);

double max_pairwise_distance(const std::array<Landmark, kNumLandmarks>& landmarks);

/// Scales the pose so its largest pairwise landmark distance equals `desired_distance`.
/// Throws DegeneratePose if all landmarks coincide (max distance < 1e-12).
HandPose scale_normalize(HandPose pose, double desired_distance);

/// 21×21 symmetric 0/1 matrix with zero diagonal.
Matrix build_adjacency(const HandTopology& topo = HandTopology::standard());

/// Joint angles on the raw pose, then translation and scale normalization,
/// then the 21×4 feature matrix. Errors carry the pose's source_id.
PoseGraph preprocess(const HandPose& pose, double desired_distance = 1.0,
                     const HandTopology& topo = HandTopology::standard());

/// Checks a loaded graph against the invariants `preprocess` guarantees.
/// Throws InvalidPose describing the first violation.
void validate_pose_graph(const PoseGraph& graph, double desired_distance,
                         const HandTopology& topo = HandTopology::standard());

} // namespace handgcn
