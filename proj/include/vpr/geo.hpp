#pragma once

#include "vpr/errors.hpp"

namespace vpr {

enum class CoordConvention { utm, latlon };

// Geotag: UTM easting/northing in meters, or latitude/longitude in degrees.
// A manifest carries exactly one convention; mixing them is an error.
struct Coordinate {
    double a = 0.0;  // easting or latitude
    double b = 0.0;  // northing or longitude
    CoordConvention convention = CoordConvention::utm;
};

// Meters between two geotags: planar Euclidean for UTM, haversine with
// radius 6371000 m for lat/lon.
double geo_distance(const Coordinate& x, const Coordinate& y);

}  // namespace vpr
