#pragma once

// Reference tables for indirect estimation from summary birth histories.
//
// Trussell multipliers and time-location coefficients for the four
// Coale-Demeny regions, transcribed from United Nations (1983), Manual X:
// Indirect Techniques for Demographic Estimation, Tables 47 and 48.
// k(i) = a(i) + b(i) P1/P2 + c(i) P2/P3,  q(x) = k(i) D(i)
// t(x) = a(i) + b(i) P1/P2 + c(i) P2/P3   (years before the census)
//
// Brass General Standard life table logits Y(x) = 0.5 ln((1 - l(x)) / l(x)),
// ages in years, from Brass (1971).
//
// Version 1. Changing any value requires a new version number.

#include <array>
#include <string_view>

namespace childsurv::tables {

inline constexpr int kVersion = 1;

enum class Region { North, South, East, West };
inline constexpr std::array<Region, 4> kRegions{Region::North, Region::South, Region::East,
                                                Region::West};

inline std::string_view to_string(Region r) {
  switch (r) {
    case Region::North: return "north";
    case Region::South: return "south";
    case Region::East: return "east";
    case Region::West: return "west";
  }
  return "?";
}

struct Coefficients {
  double a, b, c;
};

// mother groups 15-19 ... 45-49, child ages x = 1, 2, 3, 5, 10, 15, 20
inline constexpr std::array<double, 7> kTrussellAge{1, 2, 3, 5, 10, 15, 20};

inline constexpr std::array<Coefficients, 7> trussell_multipliers(Region r) {
  switch (r) {
    case Region::North:
      return {{{1.1119, -2.9287, 0.8507},
               {1.2390, -0.6865, -0.2745},
               {1.1884, 0.0421, -0.5156},
               {1.2046, 0.3037, -0.5656},
               {1.2586, 0.4236, -0.5898},
               {1.2240, 0.4222, -0.5456},
               {1.1772, 0.3486, -0.4624}}};
    case Region::South:
      return {{{1.0819, -3.0005, 0.8689},
               {1.2846, -0.6181, -0.3024},
               {1.2223, 0.0851, -0.4704},
               {1.1905, 0.2631, -0.4487},
               {1.1911, 0.3152, -0.4291},
               {1.1564, 0.3017, -0.3958},
               {1.1307, 0.2596, -0.3538}}};
    case Region::East:
      return {{{1.1461, -2.2536, 0.6259},
               {1.2231, -0.4301, -0.2245},
               {1.1593, 0.0581, -0.3479},
               {1.1404, 0.1991, -0.3487},
               {1.1540, 0.2511, -0.3506},
               {1.1336, 0.2556, -0.3428},
               {1.1201, 0.2362, -0.3227}}};
    case Region::West:
      break;
  }
  return {{{1.1415, -2.7070, 0.7663},
           {1.2563, -0.5381, -0.2637},
           {1.1851, 0.0633, -0.4177},
           {1.1720, 0.2341, -0.4272},
           {1.1865, 0.3080, -0.4452},
           {1.1746, 0.3314, -0.4537},
           {1.1639, 0.3190, -0.4435}}};
}

inline constexpr std::array<Coefficients, 7> trussell_time_location(Region r) {
  switch (r) {
    case Region::North:
      return {{{1.0921, 5.4732, -1.9672},
               {1.3207, 5.3751, 0.2133},
               {1.5996, 2.6268, 4.3701},
               {2.0779, -1.7908, 9.4126},
               {2.7705, -7.3403, 14.9352},
               {4.1520, -12.2448, 19.2349},
               {6.9650, -13.9160, 19.9542}}};
    case Region::South:
      return {{{1.0900, 5.4313, -1.8893},
               {1.3051, 5.5027, 0.2522},
               {1.5525, 2.5959, 4.8470},
               {2.0127, -2.2159, 10.3642},
               {2.7470, -8.1031, 16.0456},
               {4.2023, -12.5440, 19.3402},
               {6.7784, -13.4270, 18.7358}}};
    case Region::East:
      return {{{1.0959, 5.5864, -1.9949},
               {1.2921, 5.5897, 0.3631},
               {1.5021, 2.4692, 5.0927},
               {1.9347, -2.6419, 10.8533},
               {2.6197, -8.9693, 17.0981},
               {4.1317, -14.3550, 21.8247},
               {7.3657, -15.8083, 22.3005}}};
    case Region::West:
      break;
  }
  return {{{1.0970, 5.5628, -1.9956},
           {1.3062, 5.5677, 0.2962},
           {1.5305, 2.5528, 4.8962},
           {1.9991, -2.4261, 10.4282},
           {2.7632, -8.4065, 16.1787},
           {4.3468, -13.2436, 20.1990},
           {7.5242, -14.2013, 20.0162}}};
}

struct StandardPoint {
  double age;
  double Y;
};

inline constexpr std::array<StandardPoint, 14> kGeneralStandard{{{1, -0.8670},
                                                                 {2, -0.7152},
                                                                 {3, -0.6552},
                                                                 {4, -0.6219},
                                                                 {5, -0.6015},
                                                                 {10, -0.5498},
                                                                 {15, -0.5131},
                                                                 {20, -0.4551},
                                                                 {25, -0.3829},
                                                                 {30, -0.3150},
                                                                 {35, -0.2496},
                                                                 {40, -0.1816},
                                                                 {45, -0.1073},
                                                                 {50, -0.0212}}};

// Stylized regional families: logit l(x) = alpha + beta_region Y_s(x). The
// slopes order the regions by the ratio of infant to early-child mortality
// at a common 5q0 (East highest, North lowest) and stand in for the
// Coale-Demeny tables themselves.
inline constexpr double region_slope(Region r) {
  switch (r) {
    case Region::North: return 1.25;
    case Region::South: return 1.10;
    case Region::East: return 0.85;
    case Region::West: break;
  }
  return 1.0;
}

}  // namespace childsurv::tables
