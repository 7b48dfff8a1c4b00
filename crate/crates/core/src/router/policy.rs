use super::{Router, RoutingDecision};
use crate::corpus::RoutingExample;
use crate::error::Result;

/// Anything that picks one model per record. The evaluation harness only
/// sees this interface.
pub trait RoutingPolicy: Send + Sync {
    fn name(&self) -> String;
    fn models(&self) -> usize;
    fn decide(&self, example: &RoutingExample) -> Result<RoutingDecision>;
}

impl RoutingPolicy for Router {
    fn name(&self) -> String {
        self.spec().label()
    }

    fn models(&self) -> usize {
        Router::models(self)
    }

    fn decide(&self, example: &RoutingExample) -> Result<RoutingDecision> {
        self.route(&example.query)
    }
}
