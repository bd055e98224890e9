#pragma once

// Independent brute-force re-derivations used as test oracles. Nothing here
// calls into the library's numeric code.

#include <cmath>
#include <numbers>
#include <vector>

namespace aqcast::oracle {

struct Station {
    double lat, lon, value;
};

inline double equirect_km(double lat1, double lon1, double lat2, double lon2) {
    const double rad = std::numbers::pi / 180.0;
    const double north = 6371.0 * (lat2 - lat1) * rad;
    const double east = 6371.0 * std::cos((lat1 + lat2) / 2.0 * rad) * (lon2 - lon1) * rad;
    return std::hypot(north, east);
}

// Row-major (ny, nx) kernel-weighted averages by a plain double loop.
inline std::vector<double> project(const std::vector<Station>& stations, double lat0, double lon0, double dlat,
                                   double dlon, int ny, int nx, double d_km) {
    std::vector<double> out;
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            const double clat = lat0 + j * dlat;
            const double clon = lon0 + i * dlon;
            double num = 0, den = 0;
            for (const auto& s : stations) {
                const double w = std::exp(-equirect_km(clat, clon, s.lat, s.lon) / d_km);
                num += w * s.value;
                den += w;
            }
            out.push_back(num / den);
        }
    return out;
}

}  // namespace aqcast::oracle
