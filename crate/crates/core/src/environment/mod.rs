//! The simulated world: clock, context schedule, places, residents and the
//! message bus.

pub mod bus;
pub mod clock;
pub mod context;
pub mod geo;
pub mod population;

pub use bus::MessageBus;
pub use clock::{SimClock, TickEvents, TickLength};
pub use context::{GlobalContext, GlobalSchedule, ScheduleError};
pub use geo::{haversine, Candidate, GeoIndex, GeoPoint, Poi, SchemaError};
pub use population::{load_cbgs, sample_population, CbgProfile, SampledResident, SamplingError};
