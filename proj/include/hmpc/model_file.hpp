#pragma once

// Robot model text format. Line-oriented, whitespace-tokenized, '#' comments.
//
//   robot <name>
//   link <name> {
//     root                        # floating root (exactly one, first link)
//     parent <link-name>          # non-root: previously defined link
//     axis <x> <y> <z>            # non-root: revolute axis, joint frame
//     origin <x> <y> <z>          # non-root: joint origin in parent frame
//     limits <lo> <hi>            # non-root: position limits [rad]
//     mass <kg>
//     com <x> <y> <z>             # link frame
//     inertia <ixx> <iyy> <izz> [<ixy> <ixz> <iyz>]   # about com
//   }
//   contact <link-name> <x> <y> <z>   # contact point offset, link frame
//
// Invalid input is rejected with "<source>:<line>: <reason>". Nonzero axes are
// normalized on load; structural invariants are enforced by tree validation.

#include <istream>
#include <stdexcept>
#include <string>

#include "rigid_body.hpp"

namespace hmpc {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

KinematicTree<double> parse_robot_model(std::istream& in,
                                        const std::string& source_name);

// reads the file at `path`; throws ParseError on syntax or validation errors
KinematicTree<double> load_robot_model(const std::string& path);

}  // namespace hmpc
