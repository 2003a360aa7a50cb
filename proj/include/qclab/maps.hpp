#pragma once

#include <memory>

#include "qclab/domain.hpp"

namespace qclab {

LegMapParams2D solve_leg_map_2d(const ConstructionConfig& cfg, int j, int i);

// Exponential vertical profile of one volumetric leg map, matched against
// the stated asymptotics. g2(z) = a_coef*(exp(b_coef*z)-1) with
// g2'(0) = g1(0) and g2(height) = span (the full stage gap); the implied
// end slope g1(height) is reported against its stated value.
struct LegMapParamsND {
    int j = 0;
    enum class Form { Radial, Sheared } form = Form::Radial;
    double a_coef = 0, b_coef = 0;
    double g1_0 = 0;
    double height = 0;          // leg height
    double span = 0;            // gap height
    double residual = 0;        // endpoint residual of the solve
    double g1_end = 0;          // implied end slope
    double g1_end_stated = 0;   // stated end slope
    double g1_end_ratio = 0;
};

LegMapParamsND solve_leg_map_nd(const ConstructionConfig& cfg, int j);

struct Jacobian {
    int dim = 2;
    // Row-major; 2x2 uses m[0..3].
    double m[9] = {0};

    double det() const;
    double smin() const;
    double smax() const;
    double distortion() const { return smax() / smin(); }
};

// One glued piece. Pieces are defined analytically in the target->source
// direction; both directions evaluate in closed form.
class MapPiece {
  public:
    int stage = 0;
    bool is_leg = false;
    double feature = 1.0;  // local feature size for step/inset choices

    virtual ~MapPiece() = default;
    virtual Point t2s(const Point& p) const = 0;
    virtual Point s2t(const Point& p) const = 0;
    virtual Jacobian jac(const Point& p) const = 0;  // target -> source
    // Distance from a target point to the nearest seam of this piece
    // (edges and internal derivative kinks).
    virtual double seam_distance(const Point& p) const = 0;
};

enum class MapDirection { Forward, Inverse };  // Forward: source -> target

class PiecewiseMapModel {
  public:
    ConstructionConfig source_cfg, target_cfg;
    MapDirection direction = MapDirection::Forward;
    std::vector<std::shared_ptr<const MapPiece>> pieces;
    std::vector<int> piece_of_source_cell;
    std::vector<int> piece_of_target_cell;  // -1 where the map is undefined
    double interface_mismatch = 0;          // max over sampled interface points

    const DomainModel* source = nullptr;
    const DomainModel* target = nullptr;

    int piece_at_source(const Point& p) const;
    int piece_at_target(const Point& p) const;
};

// Both domains must outlive the model.
PiecewiseMapModel assemble_global_map(const DomainModel& source, const DomainModel& target);

Point eval_forward(const PiecewiseMapModel& map, const Point& x);   // source -> target
Point eval_inverse(const PiecewiseMapModel& map, const Point& x);   // target -> source
Point eval_map(const PiecewiseMapModel& map, const Point& x);       // honors map.direction

// Analytic Jacobian of the target->source formulas at a target point, and
// of the forward map at a source point (inverse matrix). Throws when x sits
// within `seam_tol` of a piece seam, where the derivative is ambiguous.
Jacobian jacobian_t2s(const PiecewiseMapModel& map, const Point& x, double seam_tol = 1e-9);
Jacobian jacobian_forward(const PiecewiseMapModel& map, const Point& x, double seam_tol = 1e-9);

// Central finite-difference Jacobian of the target->source map.
Jacobian fd_jacobian_t2s(const PiecewiseMapModel& map, const Point& x, double step);

struct DistortionSample {
    Point x;          // target-side sample
    int stage = 0;
    double K = 1;
    double det = 0;
};

struct DistortionReport {
    double K_sup = 1;
    DistortionSample argmax;
    std::map<int, double> per_stage_K_sup;
    double fd_residual_max = 0;   // max entrywise relative disagreement
    double offdiag_ratio_max = 0; // |gt'(y)x + g'(y)| / (k1 g'(y)), lower pieces
    double det_min = kInf;
    long samples = 0;
    std::vector<DistortionSample> kept;  // thinned sample table for export
};

struct DistortionScanSpec {
    int samples_per_leg = 400;
    int samples_per_body = 200;
    std::uint64_t seed = 1234;
    int fd_every = 16;      // finite-difference check on every k-th sample
    size_t keep = 2000;     // retained sample rows
};

DistortionReport distortion_scan(const PiecewiseMapModel& map, const DistortionScanSpec& spec);

}  // namespace qclab
