fn main() {
    minmax_bnn::cli::run();
}
