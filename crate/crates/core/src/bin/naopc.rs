fn main() {
    naopc::cli::main()
}
