#pragma once

#include "mfacv/tensor.hpp"
#include "mfacv/rng.hpp"
#include "mfacv/sampling.hpp"
#include "mfacv/estimators.hpp"
#include "mfacv/pilot.hpp"
#include "mfacv/kernels.hpp"
#include "mfacv/acv.hpp"
#include "mfacv/allocator.hpp"
#include "mfacv/models.hpp"
#include "mfacv/tabulated.hpp"
#include "mfacv/subprocess.hpp"
#include "mfacv/oracle.hpp"
#include "mfacv/study.hpp"
