//! Simulated browser host: DOM, event queue, timers, PRNG, virtual clock,
//! network requests, incremental parsing, animations and storage.

pub mod dom;
pub mod markup;
pub mod prng;
pub mod scenario;
pub mod world;

pub use dom::{Callback, DomNode, DomTree, Listener, LoadState, NodeId};
pub use prng::Xorshift64Star;
pub use scenario::{Scalar, Scenario, ScenarioError};
pub use world::{
    animation_value, AnimationState, Direct, DispatchPlan, EventDescriptor, HostUpdate, HostWorld, Interposer,
    NetRequest, ParserStream, PendingEvent, ReadyState, Timer,
};
