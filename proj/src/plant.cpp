// plant is header-only (templated on scalar); see include/hmpc/plant.hpp
#include "hmpc/plant.hpp"
